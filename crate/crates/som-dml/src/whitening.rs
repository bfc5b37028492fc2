//! Whitening transform derived from a learned metric.
//!
//! A positive semidefinite metric `M` factors as `L^T L` with row `k` of `L`
//! equal to `sqrt(lambda_k) * phi_k^T`, so squared Euclidean distances between
//! transformed points `L x` equal squared Mahalanobis distances under `M`.
//! Eigenvalues at or below `eps * lambda_max` are dropped, which shrinks the
//! output dimension instead of keeping directions the metric has collapsed.

use crate::lmnn::MahalanobisMetric;
use crate::matrix::Mat;
use crate::numerics::{sym_eig, NumericsError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative eigenvalue cutoff used when no explicit one is given.
pub const DEFAULT_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum WhiteningError {
    #[error("metric has no eigenvalue above the cutoff; nothing to transform with")]
    DegenerateMetric,
    #[error("attribute count mismatch: transform expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Row-acting linear map `x -> L x` with `L` of shape `output_dim x input_dim`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearTransform {
    l: Mat,
    dropped_dims: usize,
}

impl LinearTransform {
    /// The identity map on `dim` attributes.
    pub fn identity(dim: usize) -> Self {
        LinearTransform { l: Mat::identity(dim), dropped_dims: 0 }
    }

    pub fn input_dim(&self) -> usize {
        self.l.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.l.rows()
    }

    /// Directions removed because their eigenvalues fell at or below the cutoff.
    pub fn dropped_dims(&self) -> usize {
        self.dropped_dims
    }

    pub fn matrix(&self) -> &Mat {
        &self.l
    }

    /// Transforms each row of `x`.
    pub fn apply(&self, x: &Mat) -> Result<Mat, WhiteningError> {
        if x.cols() != self.input_dim() {
            return Err(WhiteningError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        Ok(x.matmul_transpose(&self.l))
    }

    pub fn apply_row(&self, x: &[f64]) -> Result<Vec<f64>, WhiteningError> {
        if x.len() != self.input_dim() {
            return Err(WhiteningError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok((0..self.output_dim())
            .map(|k| self.l.row(k).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Factors `metric` into a whitening transform, dropping eigenvalues at or
/// below `eps * lambda_max`.
pub fn decompose(metric: &MahalanobisMetric, eps: f64) -> Result<LinearTransform, WhiteningError> {
    let eig = sym_eig(metric.matrix())?;
    let d = metric.dim();
    let lambda_max = eig.eigenvalues[0];
    if lambda_max <= 0.0 {
        return Err(WhiteningError::DegenerateMetric);
    }
    let cutoff = eps * lambda_max;
    let kept = eig.eigenvalues.iter().take_while(|&&lam| lam > cutoff).count();
    if kept == 0 {
        return Err(WhiteningError::DegenerateMetric);
    }
    let mut l = Mat::zeros(kept, d);
    for k in 0..kept {
        let s = eig.eigenvalues[k].sqrt();
        for i in 0..d {
            l.set(k, i, s * eig.eigenvectors.get(i, k));
        }
    }
    Ok(LinearTransform { l, dropped_dims: d - kept })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmnn::mahalanobis_dist;
    use crate::matrix::sq_dist;
    use crate::numerics::SymMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_metric_gives_the_exact_identity_map() {
        let metric = MahalanobisMetric::identity(3);
        let t = decompose(&metric, DEFAULT_EPS).unwrap();
        assert_eq!(t.output_dim(), 3);
        assert_eq!(t.dropped_dims(), 0);
        for i in 0..3 {
            for j in 0..3 {
                let want: f64 = if i == j { 1.0 } else { 0.0 };
                assert_eq!(t.matrix().get(i, j).to_bits(), want.to_bits());
            }
        }
        let x = Mat::from_rows(&[vec![1.5, -2.0, 0.25]]);
        let y = t.apply(&x).unwrap();
        assert_eq!(y.row(0), x.row(0));
    }

    #[test]
    fn diagonal_metric_scales_each_axis() {
        let metric = MahalanobisMetric::from_sym(SymMatrix::from_diag(&[4.0, 1.0]));
        let t = decompose(&metric, DEFAULT_EPS).unwrap();
        assert_eq!(t.output_dim(), 2);
        assert!((t.matrix().get(0, 0) - 2.0).abs() < 1e-15);
        assert!((t.matrix().get(0, 1)).abs() < 1e-15);
        assert!((t.matrix().get(1, 0)).abs() < 1e-15);
        assert!((t.matrix().get(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_eigenvalue_drops_a_dimension() {
        let metric = MahalanobisMetric::from_sym(SymMatrix::from_diag(&[4.0, 0.0]));
        let t = decompose(&metric, DEFAULT_EPS).unwrap();
        assert_eq!(t.output_dim(), 1);
        assert_eq!(t.dropped_dims(), 1);
        assert!((t.matrix().get(0, 0) - 2.0).abs() < 1e-15);
        let out = t.apply_row(&[3.0, 7.0]).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn transformed_distances_match_the_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d = 5;
        let mut l = Mat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                l.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        let metric = MahalanobisMetric::from_sym(SymMatrix::new(l.matmul_transpose(&l)).unwrap());
        let t = decompose(&metric, DEFAULT_EPS).unwrap();

        for _ in 0..50 {
            let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let want = mahalanobis_dist(&metric, &a, &b).unwrap();
            let ta = t.apply_row(&a).unwrap();
            let tb = t.apply_row(&b).unwrap();
            let got = sq_dist(&ta, &tb);
            assert!(
                (got - want).abs() <= 1e-8 * (1.0 + want),
                "distance mismatch: transformed {got} vs metric {want}"
            );
        }
    }

    #[test]
    fn rank_deficient_metric_still_reproduces_its_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let d = 4;
        // metric built from a 2-row factor has rank at most 2
        let mut l = Mat::zeros(2, d);
        for i in 0..2 {
            for j in 0..d {
                l.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        let mut m = Mat::zeros(d, d);
        for a in 0..d {
            for b in 0..d {
                let mut s = 0.0;
                for k in 0..2 {
                    s += l.get(k, a) * l.get(k, b);
                }
                m.set(a, b, s);
            }
        }
        let metric = MahalanobisMetric::from_sym(SymMatrix::new(m).unwrap());
        let t = decompose(&metric, DEFAULT_EPS).unwrap();
        assert_eq!(t.output_dim(), 2);
        assert_eq!(t.dropped_dims(), 2);

        for _ in 0..25 {
            let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let want = mahalanobis_dist(&metric, &a, &b).unwrap();
            let got = sq_dist(&t.apply_row(&a).unwrap(), &t.apply_row(&b).unwrap());
            assert!((got - want).abs() <= 1e-8 * (1.0 + want));
        }
    }

    #[test]
    fn zero_metric_is_degenerate() {
        let metric = MahalanobisMetric::from_sym(SymMatrix::from_diag(&[0.0, 0.0]));
        assert!(matches!(decompose(&metric, DEFAULT_EPS), Err(WhiteningError::DegenerateMetric)));
    }

    #[test]
    fn apply_rejects_wrong_width() {
        let t = LinearTransform::identity(3);
        let x = Mat::from_rows(&[vec![1.0, 2.0]]);
        assert!(matches!(
            t.apply(&x),
            Err(WhiteningError::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(t.apply_row(&[1.0, 2.0, 3.0, 4.0]).is_err());
    }
}
