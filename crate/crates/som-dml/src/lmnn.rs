//! Large-margin nearest-neighbour metric learning.
//!
//! Learns a positive semidefinite matrix `M` so that the Mahalanobis
//! distance pulls each point's fixed same-class target neighbours close while
//! pushing differently-labelled points at least a unit margin further away:
//!
//! ```text
//! loss = (1 - c) * sum_{i, j target of i} D_M(i, j)
//!      +      c  * sum_{i, j, l: label l != label i} max(0, 1 + D_M(i, j) - D_M(i, l))
//! ```
//!
//! The solver is projected gradient descent from the identity: after every
//! accepted step the iterate is projected back onto the PSD cone, the step
//! size grows by 1.1 on success and halves on a loss increase (at most 20
//! retries per iteration), and the accepted-loss sequence is therefore
//! non-increasing. Distances are evaluated through an eigenfactor `L` of `M`
//! (squared Euclidean distance of `x L^T` rows), which avoids the
//! cancellation the expanded quadratic form suffers from.

use crate::dataset::LabeledDataset;
use crate::matrix::{sq_dist, Mat};
use crate::numerics::{sym_eig, NumericsError, SymMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAX_STEP_RETRIES: usize = 20;
const STEP_GROWTH: f64 = 1.1;
const PLATEAU_ITERS: usize = 3;

#[derive(Debug, Error)]
pub enum LmnnError {
    #[error("attribute count mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class {class:?} has {count} members; k = {k} target neighbours need {}", k + 1)]
    ClassTooSmall { class: String, count: usize, k: usize },
    #[error("target neighbours were built for {built_for} rows, dataset has {got}")]
    PairsMismatch { built_for: usize, got: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LmnnConfig {
    /// Target neighbours per sample.
    pub k: usize,
    /// Push-term weight in `[0, 1]`; the pull term gets `1 - c`.
    pub c: f64,
    /// Initial gradient step, adapted during the run.
    pub step_size: f64,
    pub max_iters: usize,
    /// Relative loss-change threshold; three consecutive sub-threshold
    /// iterations stop the run.
    pub tol: f64,
}

impl LmnnConfig {
    pub fn new(k: usize) -> Self {
        LmnnConfig { k, c: 0.5, step_size: 1e-7, max_iters: 1000, tol: 1e-7 }
    }

    fn validate(&self) -> Result<(), LmnnError> {
        if self.k == 0 {
            return Err(LmnnError::BadConfig("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.c) {
            return Err(LmnnError::BadConfig(format!("c = {} outside [0, 1]", self.c)));
        }
        if self.step_size <= 0.0 || self.step_size.is_nan() {
            return Err(LmnnError::BadConfig("step_size must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(LmnnError::BadConfig("max_iters must be at least 1".into()));
        }
        if self.tol < 0.0 || self.tol.is_nan() {
            return Err(LmnnError::BadConfig("tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// Learned metric matrix (kept positive semidefinite by the solver).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MahalanobisMetric {
    m: SymMatrix,
}

impl MahalanobisMetric {
    pub fn identity(dim: usize) -> Self {
        MahalanobisMetric { m: SymMatrix::identity(dim) }
    }

    pub fn from_sym(m: SymMatrix) -> Self {
        MahalanobisMetric { m }
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.m
    }
}

/// Fixed same-class target neighbours, `pairs[i]` holding the `k` nearest
/// (Euclidean, ties to the lower index) same-class indices of sample `i`.
#[derive(Clone, Debug)]
pub struct TargetNeighbors {
    pub k: usize,
    pub pairs: Vec<Vec<usize>>,
}

/// Squared Mahalanobis distance `(xi - xj)^T M (xi - xj)`, clamped at zero.
pub fn mahalanobis_dist(m: &MahalanobisMetric, xi: &[f64], xj: &[f64]) -> Result<f64, LmnnError> {
    let d = m.dim();
    if xi.len() != d || xj.len() != d {
        return Err(LmnnError::DimensionMismatch {
            expected: d,
            got: if xi.len() != d { xi.len() } else { xj.len() },
        });
    }
    let diff: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| a - b).collect();
    let mut q = 0.0;
    for (a, &da) in diff.iter().enumerate() {
        let mut row = 0.0;
        for (b, &db) in diff.iter().enumerate() {
            row += m.m.get(a, b) * db;
        }
        q += da * row;
    }
    Ok(q.max(0.0))
}

/// Selects each sample's `k` nearest same-class neighbours under the plain
/// Euclidean distance. These stay fixed for the whole optimisation.
pub fn find_target_neighbors(
    data: &LabeledDataset,
    k: usize,
) -> Result<TargetNeighbors, LmnnError> {
    if k == 0 {
        return Err(LmnnError::BadConfig("k must be at least 1".into()));
    }
    for (c, &count) in data.class_counts().iter().enumerate() {
        if count < k + 1 {
            return Err(LmnnError::ClassTooSmall {
                class: data.class_names.get(c).cloned().unwrap_or_else(|| c.to_string()),
                count,
                k,
            });
        }
    }
    let n = data.n();
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let mut candidates: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i && data.labels[j] == data.labels[i])
            .map(|j| (sq_dist(data.x.row(i), data.x.row(j)), j))
            .collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pairs.push(candidates[..k].iter().map(|&(_, j)| j).collect());
    }
    Ok(TargetNeighbors { k, pairs })
}

/// Loss value and the number of strictly active hinge triplets.
pub fn loss(
    m: &MahalanobisMetric,
    data: &LabeledDataset,
    tn: &TargetNeighbors,
    c: f64,
) -> Result<(f64, usize), LmnnError> {
    let eval = Evaluator::new(data, tn, c, m.dim())?;
    let u = apply_factor(&data.x, &factor_of(&m.m)?);
    Ok(eval.loss(&u))
}

/// Gradient of the loss with respect to the metric entries.
pub fn gradient(
    m: &MahalanobisMetric,
    data: &LabeledDataset,
    tn: &TargetNeighbors,
    c: f64,
) -> Result<SymMatrix, LmnnError> {
    let eval = Evaluator::new(data, tn, c, m.dim())?;
    let u = apply_factor(&data.x, &factor_of(&m.m)?);
    Ok(SymMatrix::new(eval.gradient(&u, true))?)
}

/// One accepted solver iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterRecord {
    pub loss: f64,
    pub active_triplets: usize,
    /// Smallest eigenvalue of the accepted (projected) iterate.
    pub min_eigenvalue: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub metric: MahalanobisMetric,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// One record per accepted step.
    pub iterations: Vec<IterRecord>,
    /// False when the iteration cap was hit before the loss plateaued.
    pub converged: bool,
}

/// Learns a metric for the dataset by projected gradient descent from the
/// identity matrix.
pub fn fit(data: &LabeledDataset, config: &LmnnConfig) -> Result<FitOutcome, LmnnError> {
    config.validate()?;
    let tn = find_target_neighbors(data, config.k)?;
    let d = data.d();
    let eval = Evaluator::new(data, &tn, config.c, d)?;

    let mut m = SymMatrix::identity(d);
    let mut u = apply_factor(&data.x, m.as_mat());
    let (mut cur_loss, _) = eval.loss(&u);
    let initial_loss = cur_loss;

    // the pull part of the gradient never changes: target pairs are fixed
    let pull = eval.pull_gradient();
    let mut step = config.step_size;
    let mut iterations = Vec::new();
    let mut plateau = 0usize;
    let mut converged = false;

    for _ in 0..config.max_iters {
        let mut grad = eval.gradient(&u, false);
        add_into(&mut grad, &pull);

        let mut accepted = None;
        for _ in 0..=MAX_STEP_RETRIES {
            let mut raw = m.as_mat().clone();
            for i in 0..d {
                for j in 0..d {
                    raw.set(i, j, raw.get(i, j) - step * grad.get(i, j));
                }
            }
            let (cand_m, cand_factor) = project_and_factor(raw)?;
            let cand_u = apply_factor(&data.x, &cand_factor);
            let (cand_loss, cand_active) = eval.loss(&cand_u);
            if cand_loss <= cur_loss {
                accepted = Some((cand_m, cand_u, cand_loss, cand_active));
                break;
            }
            step *= 0.5;
        }

        let Some((cand_m, cand_u, cand_loss, cand_active)) = accepted else {
            // no descent direction at step resolution: treat as converged
            converged = true;
            break;
        };

        let drop = cur_loss - cand_loss;
        let rel = if cur_loss == 0.0 { 0.0 } else { drop / cur_loss.abs() };
        let min_eigenvalue = min_eig(&cand_m)?;
        m = cand_m;
        u = cand_u;
        cur_loss = cand_loss;
        step *= STEP_GROWTH;
        iterations.push(IterRecord {
            loss: cur_loss,
            active_triplets: cand_active,
            min_eigenvalue,
        });

        if rel < config.tol {
            plateau += 1;
            if plateau >= PLATEAU_ITERS {
                converged = true;
                break;
            }
        } else {
            plateau = 0;
        }
    }

    Ok(FitOutcome {
        metric: MahalanobisMetric { m },
        initial_loss,
        final_loss: cur_loss,
        iterations,
        converged,
    })
}

/// Eigenfactor `L` with `L^T L` equal to the PSD part of `m` (negative
/// eigenvalues clamped): row k of `L` is `sqrt(lambda_k) * phi_k^T`.
fn factor_of(m: &SymMatrix) -> Result<Mat, LmnnError> {
    let eig = sym_eig(m)?;
    let d = m.dim();
    let mut l = Mat::zeros(d, d);
    for k in 0..d {
        let lam = eig.eigenvalues[k].max(0.0);
        if lam == 0.0 {
            continue;
        }
        let s = lam.sqrt();
        for i in 0..d {
            l.set(k, i, s * eig.eigenvectors.get(i, k));
        }
    }
    Ok(l)
}

fn apply_factor(x: &Mat, l: &Mat) -> Mat {
    x.matmul_transpose(l)
}

/// Projects a raw gradient step onto the PSD cone and returns the projected
/// matrix together with its eigenfactor.
fn project_and_factor(raw: Mat) -> Result<(SymMatrix, Mat), LmnnError> {
    let sym = SymMatrix::new(raw)?;
    let eig = sym_eig(&sym)?;
    let d = sym.dim();
    let mut l = Mat::zeros(d, d);
    let mut scaled = Mat::zeros(d, d);
    for k in 0..d {
        let lam = eig.eigenvalues[k].max(0.0);
        if lam == 0.0 {
            continue;
        }
        let s = lam.sqrt();
        for i in 0..d {
            let v = eig.eigenvectors.get(i, k);
            l.set(k, i, s * v);
            scaled.set(i, k, lam * v);
        }
    }
    let projected = SymMatrix::new(scaled.matmul_transpose(&eig.eigenvectors))?;
    Ok((projected, l))
}

fn min_eig(m: &SymMatrix) -> Result<f64, LmnnError> {
    let eig = sym_eig(m)?;
    Ok(*eig.eigenvalues.last().expect("non-empty spectrum"))
}

fn add_into(dst: &mut Mat, src: &Mat) {
    for i in 0..dst.rows() {
        for j in 0..dst.cols() {
            dst.set(i, j, dst.get(i, j) + src.get(i, j));
        }
    }
}

/// Shared loss/gradient machinery over a fixed dataset and target-pair set.
struct Evaluator<'a> {
    x: &'a Mat,
    labels: &'a [usize],
    pairs: &'a [Vec<usize>],
    c: f64,
}

impl<'a> Evaluator<'a> {
    fn new(
        data: &'a LabeledDataset,
        tn: &'a TargetNeighbors,
        c: f64,
        metric_dim: usize,
    ) -> Result<Self, LmnnError> {
        if metric_dim != data.d() {
            return Err(LmnnError::DimensionMismatch { expected: data.d(), got: metric_dim });
        }
        if tn.pairs.len() != data.n() {
            return Err(LmnnError::PairsMismatch { built_for: tn.pairs.len(), got: data.n() });
        }
        if !(0.0..=1.0).contains(&c) {
            return Err(LmnnError::BadConfig(format!("c = {c} outside [0, 1]")));
        }
        Ok(Evaluator { x: &data.x, labels: &data.labels, pairs: &tn.pairs, c })
    }

    fn distance_row(&self, u: &Mat, i: usize, row: &mut [f64]) {
        let ui = u.row(i);
        for (l, slot) in row.iter_mut().enumerate() {
            *slot = sq_dist(ui, u.row(l));
        }
    }

    fn loss(&self, u: &Mat) -> (f64, usize) {
        let n = self.x.rows();
        let mut row = vec![0.0; n];
        let mut total = 0.0;
        let mut active = 0usize;
        for i in 0..n {
            self.distance_row(u, i, &mut row);
            for &j in &self.pairs[i] {
                let dij = row[j];
                total += (1.0 - self.c) * dij;
                let margin = 1.0 + dij;
                for (label, &dil) in self.labels.iter().zip(&row) {
                    if *label == self.labels[i] {
                        continue;
                    }
                    let h = margin - dil;
                    if h > 0.0 {
                        total += self.c * h;
                        active += 1;
                    }
                }
            }
        }
        (total, active)
    }

    /// Pull part only: `(1 - c) * sum C_ij` over target pairs.
    fn pull_gradient(&self) -> Mat {
        let d = self.x.cols();
        let mut g = Mat::zeros(d, d);
        for (i, targets) in self.pairs.iter().enumerate() {
            for &j in targets {
                accumulate_outer(&mut g, self.x.row(i), self.x.row(j), 1.0 - self.c);
            }
        }
        mirror_upper(&mut g);
        g
    }

    /// Hinge part of the gradient; with `include_pull` the constant pull part
    /// is folded in as well.
    fn gradient(&self, u: &Mat, include_pull: bool) -> Mat {
        let n = self.x.rows();
        let d = self.x.cols();
        let mut g = Mat::zeros(d, d);
        let mut row = vec![0.0; n];
        let mut weight = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();

        for i in 0..n {
            self.distance_row(u, i, &mut row);
            for &t in &touched {
                weight[t] = 0.0;
            }
            touched.clear();
            let add = |weight: &mut [f64], touched: &mut Vec<usize>, t: usize, w: f64| {
                if weight[t] == 0.0 {
                    touched.push(t);
                }
                weight[t] += w;
            };
            for &j in &self.pairs[i] {
                if include_pull {
                    add(&mut weight, &mut touched, j, 1.0 - self.c);
                }
                let margin = 1.0 + row[j];
                for (l, &dil) in row.iter().enumerate() {
                    if self.labels[l] == self.labels[i] {
                        continue;
                    }
                    if margin - dil > 0.0 {
                        add(&mut weight, &mut touched, j, self.c);
                        add(&mut weight, &mut touched, l, -self.c);
                    }
                }
            }
            for &t in &touched {
                let w = weight[t];
                if w != 0.0 {
                    accumulate_outer(&mut g, self.x.row(i), self.x.row(t), w);
                }
            }
        }
        mirror_upper(&mut g);
        g
    }
}

/// Adds `w * (a - b)(a - b)^T` into the upper triangle of `g`.
fn accumulate_outer(g: &mut Mat, a: &[f64], b: &[f64], w: f64) {
    let d = a.len();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    for p in 0..d {
        let wp = w * diff[p];
        if wp == 0.0 {
            continue;
        }
        let grow = g.row_mut(p);
        for q in p..d {
            grow[q] += wp * diff[q];
        }
    }
}

fn mirror_upper(g: &mut Mat) {
    let d = g.rows();
    for p in 0..d {
        for q in p + 1..d {
            let v = g.get(p, q);
            g.set(q, p, v);
        }
    }
}
