//! Small dense linear-algebra helpers shared across the estimators.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Numerically stable `ln sum_i exp(v_i)`; `-inf` for an empty input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Clamps the eigenvalues of a symmetric matrix from below.
///
/// Returns the input unchanged when no eigenvalue is below `floor`.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return m.clone();
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Multivariate normal with a cached Cholesky factor.
#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::InvalidInput("covariance shape does not match mean".into()));
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Numerical("component covariance is not positive definite".into()))?;
        let l = chol.l_dirty();
        let half_log_det: f64 = (0..dim).map(|i| l[(i, i)].ln()).sum();
        if !half_log_det.is_finite() {
            return Err(Error::Numerical("component covariance is singular".into()));
        }
        Ok(Gaussian {
            mean,
            chol,
            log_norm: -0.5 * dim as f64 * LN_2PI - half_log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn log_density(&self, z: &DVector<f64>) -> f64 {
        let r = z - &self.mean;
        // quadratic form is |L^-1 r|^2; l_dirty's upper triangle is ignored here
        let white = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&r)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * white.norm_squared()
    }
}

/// Log density of `N(z | mean, s I)`.
pub fn spherical_log_density(z: &DVector<f64>, mean: &DVector<f64>, s: f64) -> f64 {
    let dim = z.len() as f64;
    -0.5 * dim * (2.0 * PI * s).ln() - 0.5 * (z - mean).norm_squared() / s
}

/// Column mean of a `D x N` data matrix.
pub fn column_mean(z: &DMatrix<f64>) -> DVector<f64> {
    z.column_mean()
}

/// Maximum-likelihood covariance (normalized by N) of the columns of `z`.
pub fn sample_covariance(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.ncols().max(1) as f64;
    let mean = z.column_mean();
    let mut centered = z.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    &centered * centered.transpose() / n
}
