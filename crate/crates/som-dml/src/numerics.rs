//! Symmetric eigendecomposition and the PSD cone projection built on it.
//!
//! The solver is a cyclic Jacobi sweep: adequate and robust for the matrix
//! sizes that occur here (metric and covariance matrices up to a few hundred
//! rows), with no external linear-algebra dependency. Conventions are fixed
//! so downstream results are reproducible: eigenvalues are sorted descending
//! and each eigenvector's largest-magnitude component (first such index on
//! ties) is made positive.

use crate::matrix::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAX_SWEEPS: usize = 100;
const OFF_DIAG_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error(
        "eigensolver did not converge in {MAX_SWEEPS} sweeps (off-diagonal residual {residual:e})"
    )]
    NoConvergence { residual: f64 },
}

/// Square symmetric matrix; construction symmetrizes and validates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    m: Mat,
}

impl SymMatrix {
    /// Validates squareness and finiteness, then symmetrizes as
    /// `(A + A^T) / 2` so tiny asymmetries cannot leak further.
    pub fn new(m: Mat) -> Result<Self, NumericsError> {
        if m.rows() != m.cols() {
            return Err(NumericsError::NotSquare { rows: m.rows(), cols: m.cols() });
        }
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                if !m.get(i, j).is_finite() {
                    return Err(NumericsError::NonFinite { row: i, col: j });
                }
            }
        }
        let n = m.rows();
        let mut sym = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                sym.set(i, j, 0.5 * (m.get(i, j) + m.get(j, i)));
            }
        }
        Ok(SymMatrix { m: sym })
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix { m: Mat::identity(n) }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Mat::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        SymMatrix { m }
    }

    pub fn dim(&self) -> usize {
        self.m.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m.get(i, j)
    }

    pub fn as_mat(&self) -> &Mat {
        &self.m
    }

    pub fn into_mat(self) -> Mat {
        self.m
    }
}

/// Eigenvalues (descending) with matching eigenvector columns.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal; column k pairs with `eigenvalues[k]`.
    pub eigenvectors: Mat,
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eig(a: &SymMatrix) -> Result<EigenDecomposition, NumericsError> {
    let n = a.dim();
    let mut work = a.as_mat().clone();
    let mut v = Mat::identity(n);
    let anorm = work.frobenius_norm();

    if n > 1 && anorm > 0.0 {
        let mut converged = false;
        for _sweep in 0..MAX_SWEEPS {
            if off_diag_norm(&work) <= OFF_DIAG_TOL * anorm {
                converged = true;
                break;
            }
            for p in 0..n - 1 {
                for q in p + 1..n {
                    rotate(&mut work, &mut v, p, q);
                }
            }
        }
        if !converged {
            let residual = off_diag_norm(&work);
            if residual > OFF_DIAG_TOL * anorm {
                return Err(NumericsError::NoConvergence { residual });
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| work.get(j, j).partial_cmp(&work.get(i, i)).unwrap());

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues.push(work.get(src, src));
        let mut col: Vec<f64> = (0..n).map(|i| v.get(i, src)).collect();
        fix_sign(&mut col);
        for (i, &x) in col.iter().enumerate() {
            eigenvectors.set(i, dst, x);
        }
    }
    Ok(EigenDecomposition { eigenvalues, eigenvectors })
}

/// Nearest (Frobenius) positive semidefinite matrix: eigenvalues clipped at
/// zero, then reconstructed.
pub fn project_psd(a: &SymMatrix) -> Result<SymMatrix, NumericsError> {
    let eig = sym_eig(a)?;
    let n = a.dim();
    let mut scaled = Mat::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k].max(0.0);
        if lam == 0.0 {
            continue;
        }
        for i in 0..n {
            scaled.set(i, k, eig.eigenvectors.get(i, k) * lam);
        }
    }
    SymMatrix::new(scaled.matmul_transpose(&eig.eigenvectors))
}

fn off_diag_norm(a: &Mat) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let x = a.get(i, j);
                sum += x * x;
            }
        }
    }
    sum.sqrt()
}

/// One Jacobi rotation zeroing the (p, q) entry of `a`, accumulated into `v`.
fn rotate(a: &mut Mat, v: &mut Mat, p: usize, q: usize) {
    let apq = a.get(p, q);
    if apq == 0.0 {
        return;
    }
    let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
    // for very large |theta| the exact formula underflows; fall back to the
    // first-order tangent
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else if theta >= 0.0 {
        1.0 / (theta + (theta * theta + 1.0).sqrt())
    } else {
        1.0 / (theta - (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let n = a.rows();
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    a.set(p, p, app - t * apq);
    a.set(q, q, aqq + t * apq);
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);
    for i in 0..n {
        if i == p || i == q {
            continue;
        }
        let aip = a.get(i, p);
        let aiq = a.get(i, q);
        a.set(i, p, c * aip - s * aiq);
        a.set(p, i, c * aip - s * aiq);
        a.set(i, q, s * aip + c * aiq);
        a.set(q, i, s * aip + c * aiq);
    }
    for i in 0..n {
        let vip = v.get(i, p);
        let viq = v.get(i, q);
        v.set(i, p, c * vip - s * viq);
        v.set(i, q, s * vip + c * viq);
    }
}

/// Makes the largest-magnitude component (first such index on ties) positive.
fn fix_sign(col: &mut [f64]) {
    let mut best = 0;
    for (i, &x) in col.iter().enumerate() {
        if x.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        for x in col.iter_mut() {
            *x = -*x;
        }
    }
}
