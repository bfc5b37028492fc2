//! Principal component analysis fitted on training data only.
//!
//! Two equivalent paths: the `d x d` sample covariance eigenproblem when the
//! data has at least as many rows as columns, and the `n x n` Gram-matrix
//! eigenproblem when rows are scarce (wide data such as pixel images), where
//! each covariance eigenvector is recovered from a Gram eigenvector.

use crate::matrix::Mat;
use crate::numerics::{sym_eig, NumericsError, SymMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("component count {r} out of range (valid: 1..={max})")]
    OutOfRange { r: usize, max: usize },
    #[error("need at least 2 rows to fit, have {0}")]
    TooFewRows(usize),
    #[error("data has zero total variance")]
    DegenerateData,
    #[error("data rank {available} is below the requested {requested} components")]
    InsufficientRank { available: usize, requested: usize },
    #[error("attribute count mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `r x d`; row k is the k-th principal axis (unit length, descending
    /// variance, largest-magnitude entry positive).
    pub components: Mat,
    /// Fraction of the total variance carried by each kept component.
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn fit(x: &Mat, r: usize) -> Result<PcaModel, PcaError> {
        let (n, d) = (x.rows(), x.cols());
        if n < 2 {
            return Err(PcaError::TooFewRows(n));
        }
        let max = d.min(n - 1);
        if r == 0 || r > max {
            return Err(PcaError::OutOfRange { r, max });
        }

        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut centered = Mat::zeros(n, d);
        for i in 0..n {
            for (j, (&v, &m)) in x.row(i).iter().zip(&mean).enumerate() {
                centered.set(i, j, v - m);
            }
        }

        let denom = (n - 1) as f64;
        let total_variance: f64 = centered.data().iter().map(|v| v * v).sum::<f64>() / denom;
        if total_variance <= 0.0 {
            return Err(PcaError::DegenerateData);
        }

        let (eigenvalues, components) = if d <= n {
            covariance_components(&centered, denom, r)?
        } else {
            gram_components(&centered, denom, r)?
        };

        let explained_variance_ratio =
            eigenvalues.iter().map(|l| l.max(0.0) / total_variance).collect();
        Ok(PcaModel { mean, components, explained_variance_ratio })
    }

    /// Projects rows onto the principal axes: `(x - mean) * components^T`.
    pub fn transform(&self, x: &Mat) -> Result<Mat, PcaError> {
        let d = self.mean.len();
        if x.cols() != d {
            return Err(PcaError::DimensionMismatch { expected: d, got: x.cols() });
        }
        let mut centered = Mat::zeros(x.rows(), d);
        for i in 0..x.rows() {
            for (j, (&v, &m)) in x.row(i).iter().zip(&self.mean).enumerate() {
                centered.set(i, j, v - m);
            }
        }
        Ok(centered.matmul_transpose(&self.components))
    }
}

fn covariance_components(
    centered: &Mat,
    denom: f64,
    r: usize,
) -> Result<(Vec<f64>, Mat), PcaError> {
    let d = centered.cols();
    let mut cov = centered.transpose().matmul(centered);
    for i in 0..d {
        for j in 0..d {
            cov.set(i, j, cov.get(i, j) / denom);
        }
    }
    let eig = sym_eig(&SymMatrix::new(cov)?)?;
    let mut components = Mat::zeros(r, d);
    for k in 0..r {
        for i in 0..d {
            components.set(k, i, eig.eigenvectors.get(i, k));
        }
    }
    Ok((eig.eigenvalues[..r].to_vec(), components))
}

fn gram_components(centered: &Mat, denom: f64, r: usize) -> Result<(Vec<f64>, Mat), PcaError> {
    let (n, d) = (centered.rows(), centered.cols());
    let mut gram = centered.matmul_transpose(centered);
    for i in 0..n {
        for j in 0..n {
            gram.set(i, j, gram.get(i, j) / denom);
        }
    }
    let eig = sym_eig(&SymMatrix::new(gram)?)?;
    let rank_tol = 1e-12 * eig.eigenvalues[0].max(0.0);
    let available = eig.eigenvalues.iter().filter(|l| **l > rank_tol).count();
    if available < r {
        return Err(PcaError::InsufficientRank { available, requested: r });
    }

    let mut components = Mat::zeros(r, d);
    for k in 0..r {
        let lam = eig.eigenvalues[k];
        let scale = 1.0 / (denom * lam).sqrt();
        let mut row = vec![0.0; d];
        for i in 0..n {
            let u = eig.eigenvectors.get(i, k) * scale;
            for (acc, &v) in row.iter_mut().zip(centered.row(i)) {
                *acc += u * v;
            }
        }
        fix_row_sign(&mut row);
        components.row_mut(k).copy_from_slice(&row);
    }
    Ok((eig.eigenvalues[..r].to_vec(), components))
}

fn fix_row_sign(row: &mut [f64]) {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x.abs() > row[best].abs() {
            best = i;
        }
    }
    if row[best] < 0.0 {
        for x in row.iter_mut() {
            *x = -*x;
        }
    }
}
