//! D independent GPs sharing one ARD kernel, conditioned on latent/target pairs.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::kernel::{
    cross_cov, downdate_inverse, expected_k, expected_kk, factorize_psd, kernel_matrix,
    Hyperparams, LatentConfig, PsdFactor,
};
use crate::linalg::floor_eigenvalues;

/// Eigenvalue floor applied to moment-matched output covariances.
pub const COV_EIG_FLOOR: f64 = 1e-10;

/// GP map conditioned on `(X, Zbar)`.
#[derive(Clone, Debug)]
pub struct GpConditioned {
    latents: LatentConfig,
    targets: DMatrix<f64>,
    hyp: Hyperparams,
    factor: PsdFactor,
    inverse: DMatrix<f64>,
    /// `A` (N x D), with `A' = Zbar K^-1`.
    weights: DMatrix<f64>,
}

/// Output covariance of a prediction.
#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    /// `s * I`
    Spherical(f64),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn to_matrix(&self, dim: usize) -> DMatrix<f64> {
        match self {
            Covariance::Spherical(s) => DMatrix::identity(dim, dim) * *s,
            Covariance::Full(m) => m.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveMoments {
    pub mean: DVector<f64>,
    pub cov: Covariance,
}

impl GpConditioned {
    /// Conditions the GPs on latent points `x` (d x N) and targets `zbar` (D x N).
    pub fn condition(x: &LatentConfig, zbar: &DMatrix<f64>, hyp: &Hyperparams) -> Result<Self> {
        hyp.validate()?;
        if x.len() != zbar.ncols() {
            return invalid(format!(
                "{} latent points but {} target columns",
                x.len(),
                zbar.ncols()
            ));
        }
        if x.is_empty() {
            return invalid("cannot condition a GP on zero points");
        }
        let k = kernel_matrix(x, hyp)?;
        let factor = factorize_psd(&k)?;
        let inverse = factor.inverse();
        let weights = &inverse * zbar.transpose();
        Ok(GpConditioned {
            latents: x.clone(),
            targets: zbar.clone(),
            hyp: hyp.clone(),
            factor,
            inverse,
            weights,
        })
    }

    pub fn latents(&self) -> &LatentConfig {
        &self.latents
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn hyp(&self) -> &Hyperparams {
        &self.hyp
    }

    pub fn kernel_factor(&self) -> &PsdFactor {
        &self.factor
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn output_dim(&self) -> usize {
        self.targets.nrows()
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    /// Prediction for a deterministic input: `N(A' k*, s I)`, `s = k** - k*' K^-1 k*`.
    pub fn predict_det(&self, xstar: &[f64]) -> Result<PredictiveMoments> {
        let kstar = cross_cov(&self.latents, xstar, &self.hyp)?;
        let mean = self.weights.tr_mul(&kstar);
        // exact value is at least the noise level, rounding can undershoot it
        let s = (self.hyp.k_star_star() - kstar.dot(&(&self.inverse * &kstar))).max(self.hyp.noise_var);
        Ok(PredictiveMoments {
            mean,
            cov: Covariance::Spherical(s),
        })
    }

    /// [`predict_det`](Self::predict_det) at training latent `j`.
    ///
    /// With `k* = K e_j - nu e_j` the mean is `z_j - nu a_j` and the variance
    /// `sn2 + nu (1 - nu K^-1_jj)`, free of the cancellation the generic form
    /// suffers when `K` is ill-conditioned.
    pub fn predict_det_training(&self, j: usize) -> Result<PredictiveMoments> {
        if j >= self.len() {
            return invalid(format!("index {j} out of range for {} points", self.len()));
        }
        let nu = self.hyp.noise_var + self.factor.jitter_used();
        let mean = self.targets.column(j) - self.weights.row(j).transpose() * nu;
        let s = self.hyp.noise_var + nu * (1.0 - nu * self.inverse[(j, j)]).max(0.0);
        Ok(PredictiveMoments {
            mean,
            cov: Covariance::Spherical(s),
        })
    }

    /// Moment-matched prediction for an input distributed as `N(x*, diag(latent_var))`.
    ///
    /// `Sigma = (k** - tr(K^-1 Khat)) I + A' (Khat - kt kt') A`, symmetrized and
    /// eigenvalue-floored at [`COV_EIG_FLOOR`].
    pub fn predict_gauss(&self, xstar: &[f64], latent_var: &[f64]) -> Result<PredictiveMoments> {
        let hyp = self.with_latent_var(latent_var)?;
        let kt = expected_k(&self.latents, xstar, &hyp)?;
        let kk = expected_kk(&self.latents, xstar, &hyp)?;
        let mean = self.weights.tr_mul(&kt);
        let trace = self.inverse.component_mul(&kk).sum();
        let spread = &kk - &kt * kt.transpose();
        let mut cov = self.weights.tr_mul(&(spread * &self.weights));
        let iso = hyp.k_star_star() - trace;
        for i in 0..cov.nrows() {
            cov[(i, i)] += iso;
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(PredictiveMoments {
            mean,
            cov: Covariance::Full(floor_eigenvalues(&cov, COV_EIG_FLOOR)),
        })
    }

    /// Mean prediction from the GP with pair `i` removed, given the kernel
    /// vector `kvec` of the query (either `k*` or its expectation).
    ///
    /// The inverse is downdated rather than refactorized; the covariance is not
    /// touched.
    pub fn predict_mean_loo_with(&self, kvec: &DVector<f64>, i: usize) -> Result<DVector<f64>> {
        let n = self.len();
        if n < 2 {
            return invalid("leave-one-out prediction needs at least two points");
        }
        if i >= n {
            return invalid(format!("index {i} out of range for {n} points"));
        }
        if kvec.len() != n {
            return invalid("kernel vector length does not match the training set");
        }
        let inv = downdate_inverse(&self.inverse, i)?;
        let k_rest = kvec.clone().remove_row(i);
        let z_rest = self.targets.clone().remove_column(i);
        Ok(z_rest * (inv * k_rest))
    }

    /// Leave-one-out mean for a deterministic query point.
    pub fn predict_mean_loo(&self, xstar: &[f64], i: usize) -> Result<DVector<f64>> {
        let kvec = cross_cov(&self.latents, xstar, &self.hyp)?;
        self.predict_mean_loo_with(&kvec, i)
    }

    /// Leave-one-out mean for a Gaussian query `N(x*, diag(latent_var))`.
    pub fn predict_mean_loo_gauss(
        &self,
        xstar: &[f64],
        latent_var: &[f64],
        i: usize,
    ) -> Result<DVector<f64>> {
        let hyp = self.with_latent_var(latent_var)?;
        let kvec = expected_k(&self.latents, xstar, &hyp)?;
        self.predict_mean_loo_with(&kvec, i)
    }

    fn with_latent_var(&self, latent_var: &[f64]) -> Result<Hyperparams> {
        let mut hyp = self.hyp.clone();
        hyp.latent_var = latent_var.to_vec();
        hyp.validate()?;
        Ok(hyp)
    }
}
