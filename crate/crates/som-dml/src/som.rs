//! Supervised self-organising map.
//!
//! Each neuron on a `rows x cols` lattice carries an attribute part `A` and a
//! class part `C` (one slot per class). Training presents samples in a fresh
//! shuffled order every epoch; the winning neuron minimises
//! `||x - A||^2 + ||y - C||^2` over the grid (`y` one-hot), and every neuron
//! is then attracted towards the sample:
//!
//! ```text
//! A += eta (x - A),  C += eta (y - C),
//! eta = mu0 * exp(-t * lambda) * exp(-alpha * S)
//! ```
//!
//! where `t` is the epoch index and `S` the squared lattice distance to the
//! winner. At test time only the attribute part competes, and a sample takes
//! the largest class-part entry of its winning neuron as prediction.
//!
//! After each epoch the quantisation cost (the sum of winning train distances
//! under the just-updated grid) is measured; training stops once the best
//! cost seen has not improved by more than `1e-9` for `patience` consecutive
//! epochs, or at `max_epochs`.

use crate::dataset::LabeledDataset;
use crate::matrix::{sq_dist, Mat};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum cost improvement that resets the plateau counter.
const COST_IMPROVEMENT: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SomError {
    #[error("grid must have at least one row and one column, got {rows}x{cols}")]
    EmptyGrid { rows: usize, cols: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("grid built for {expected} attributes, data has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grid built for {expected} classes, data has {got}")]
    ClassMismatch { expected: usize, got: usize },
    #[error("cannot train on an empty dataset")]
    EmptyData,
    #[error("neuron array shape {rows}x{cols} does not match {neurons} neurons")]
    BadParts { rows: usize, cols: usize, neurons: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SomConfig {
    pub rows: usize,
    pub cols: usize,
    /// Base learning rate.
    pub mu0: f64,
    /// Per-epoch learning-rate decay.
    pub lambda: f64,
    /// Lattice-distance attenuation.
    pub alpha: f64,
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    /// Standard deviation of the Gaussian neuron initialisation.
    pub init_std: f64,
    pub seed: u64,
}

impl SomConfig {
    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        SomConfig {
            rows,
            cols,
            mu0: 0.01,
            lambda: 0.005,
            alpha: 0.1,
            max_epochs: 400,
            patience: 10,
            init_std: 0.5,
            seed,
        }
    }

    fn validate(&self) -> Result<(), SomError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(SomError::EmptyGrid { rows: self.rows, cols: self.cols });
        }
        if self.mu0 <= 0.0 || self.mu0.is_nan() {
            return Err(SomError::BadConfig("mu0 must be positive".into()));
        }
        if self.lambda < 0.0 || self.lambda.is_nan() {
            return Err(SomError::BadConfig("lambda must be non-negative".into()));
        }
        if self.alpha < 0.0 || self.alpha.is_nan() {
            return Err(SomError::BadConfig("alpha must be non-negative".into()));
        }
        if self.max_epochs == 0 {
            return Err(SomError::BadConfig("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(SomError::BadConfig("patience must be at least 1".into()));
        }
        if self.init_std < 0.0 || !self.init_std.is_finite() {
            return Err(SomError::BadConfig("init_std must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Neuron lattice in row-major order: neuron `(p, q)` lives at `p * cols + q`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SomGrid {
    rows: usize,
    cols: usize,
    /// Attribute parts, one neuron per row.
    a: Mat,
    /// Class parts, one neuron per row.
    c: Mat,
}

impl SomGrid {
    pub fn from_parts(rows: usize, cols: usize, a: Mat, c: Mat) -> Result<SomGrid, SomError> {
        if rows == 0 || cols == 0 {
            return Err(SomError::EmptyGrid { rows, cols });
        }
        if a.rows() != rows * cols || c.rows() != rows * cols {
            let neurons = if a.rows() != rows * cols { a.rows() } else { c.rows() };
            return Err(SomError::BadParts { rows, cols, neurons });
        }
        Ok(SomGrid { rows, cols, a, c })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn neurons(&self) -> usize {
        self.rows * self.cols
    }

    pub fn attribute_dim(&self) -> usize {
        self.a.cols()
    }

    pub fn class_dim(&self) -> usize {
        self.c.cols()
    }

    pub fn attribute_parts(&self) -> &Mat {
        &self.a
    }

    pub fn class_parts(&self) -> &Mat {
        &self.c
    }

    pub fn neuron_pos(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    /// Winner under the training distance (attribute and class parts).
    /// Ties resolve to the lowest neuron index.
    pub fn bmu_train(&self, x: &[f64], y: &[f64]) -> (usize, f64) {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for i in 0..self.neurons() {
            let dist = sq_dist(x, self.a.row(i)) + sq_dist(y, self.c.row(i));
            if dist < best_dist {
                best = i;
                best_dist = dist;
            }
        }
        (best, best_dist)
    }

    /// Winner under the test distance (attribute part only).
    pub fn bmu(&self, x: &[f64]) -> (usize, f64) {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for i in 0..self.neurons() {
            let dist = sq_dist(x, self.a.row(i));
            if dist < best_dist {
                best = i;
                best_dist = dist;
            }
        }
        (best, best_dist)
    }

    /// Class carried by the winning neuron: the index of its largest class
    /// slot, the first one on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        let (bmu, _) = self.bmu(x);
        let slots = self.c.row(bmu);
        let mut best = 0;
        for (k, &v) in slots.iter().enumerate() {
            if v > slots[best] {
                best = k;
            }
        }
        best
    }
}

/// Draws the initial grid: every attribute and class slot sampled from
/// `N(0, init_std^2)`, attribute parts first, both in neuron order.
pub fn init_grid(config: &SomConfig, d: usize, n_classes: usize) -> Result<SomGrid, SomError> {
    config.validate()?;
    let neurons = config.rows * config.cols;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let normal = Normal::new(0.0, config.init_std)
        .map_err(|e| SomError::BadConfig(format!("initialisation spread: {e}")))?;
    let mut a = Mat::zeros(neurons, d);
    for i in 0..neurons {
        for j in 0..d {
            a.set(i, j, normal.sample(&mut rng));
        }
    }
    let mut c = Mat::zeros(neurons, n_classes);
    for i in 0..neurons {
        for j in 0..n_classes {
            c.set(i, j, normal.sample(&mut rng));
        }
    }
    SomGrid::from_parts(config.rows, config.cols, a, c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    EpochCap,
}

#[derive(Clone, Debug)]
pub struct TrainedSom {
    pub grid: SomGrid,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    /// Post-epoch quantisation cost, one entry per epoch run.
    pub cost_trace: Vec<f64>,
}

/// Initialises a fresh grid from the config and trains it on `data`.
pub fn train(data: &LabeledDataset, config: &SomConfig) -> Result<TrainedSom, SomError> {
    let grid = init_grid(config, data.d(), data.n_classes)?;
    train_from(grid, data, config)
}

/// Trains a caller-supplied grid (for example a freshly initialised one that
/// has been hashed or persisted first).
pub fn train_from(
    mut grid: SomGrid,
    data: &LabeledDataset,
    config: &SomConfig,
) -> Result<TrainedSom, SomError> {
    config.validate()?;
    if data.n() == 0 {
        return Err(SomError::EmptyData);
    }
    if grid.attribute_dim() != data.d() {
        return Err(SomError::DimensionMismatch { expected: grid.attribute_dim(), got: data.d() });
    }
    if grid.class_dim() != data.n_classes {
        return Err(SomError::ClassMismatch { expected: grid.class_dim(), got: data.n_classes });
    }

    let n = data.n();
    let y = data.one_hot_labels();
    let neurons = grid.neurons();
    let max_s = (config.rows - 1) * (config.rows - 1) + (config.cols - 1) * (config.cols - 1);
    let tau: Vec<f64> = (0..=max_s).map(|s| (-config.alpha * s as f64).exp()).collect();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();

    let mut cost_trace = Vec::new();
    let mut best_cost = f64::INFINITY;
    let mut plateau = 0usize;
    let mut stop_reason = StopReason::EpochCap;
    let mut epochs_run = 0usize;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let eta_base = config.mu0 * (-(epoch as f64) * config.lambda).exp();

        for &idx in &order {
            let x = data.x.row(idx);
            let yi = y.row(idx);
            let (bmu, _) = grid.bmu_train(x, yi);
            let (bp, bq) = (bmu / config.cols, bmu % config.cols);
            for i in 0..neurons {
                let (p, q) = (i / config.cols, i % config.cols);
                let dp = bp.abs_diff(p);
                let dq = bq.abs_diff(q);
                let eta = eta_base * tau[dp * dp + dq * dq];
                for (w, &v) in grid.a.row_mut(i).iter_mut().zip(x) {
                    *w += eta * (v - *w);
                }
                for (w, &v) in grid.c.row_mut(i).iter_mut().zip(yi) {
                    *w += eta * (v - *w);
                }
            }
        }

        let mut cost = 0.0;
        for idx in 0..n {
            let (_, dist) = grid.bmu_train(data.x.row(idx), y.row(idx));
            cost += dist;
        }
        cost_trace.push(cost);
        epochs_run = epoch + 1;

        if cost < best_cost - COST_IMPROVEMENT {
            best_cost = cost;
            plateau = 0;
        } else {
            plateau += 1;
            if plateau >= config.patience {
                stop_reason = StopReason::Plateau;
                break;
            }
        }
    }

    Ok(TrainedSom { grid, epochs_run, stop_reason, cost_trace })
}

/// Percentage of samples whose prediction disagrees with their label.
pub fn classification_error(grid: &SomGrid, data: &LabeledDataset) -> Result<f64, SomError> {
    if data.n() == 0 {
        return Err(SomError::EmptyData);
    }
    if grid.attribute_dim() != data.d() {
        return Err(SomError::DimensionMismatch { expected: grid.attribute_dim(), got: data.d() });
    }
    let wrong = (0..data.n()).filter(|&i| grid.predict(data.x.row(i)) != data.labels[i]).count();
    Ok(100.0 * wrong as f64 / data.n() as f64)
}
