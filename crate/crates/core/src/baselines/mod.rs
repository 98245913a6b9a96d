//! Reference density estimators: penalized Gaussian mixture, diagonal KDE and manifold Parzen windows.

mod gm;
mod kde;
mod kmeans;
mod mp;

pub use gm::{fit_gm, gm_loo_objective, GaussianMixtureModel, GmComponent};
pub use kde::{fit_kde, kde_loo_objective, KdeModel};
pub use kmeans::kmeans;
pub use mp::{fit_mp, local_scatter, mp_loo_objective, ManifoldParzenModel};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::LogDensity;
use crate::error::Result;
use crate::linalg::{log_sum_exp, LN_2PI};

/// Any fitted baseline.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaselineModel {
    Gm(GaussianMixtureModel),
    Kde(KdeModel),
    Mp(ManifoldParzenModel),
}

impl LogDensity for BaselineModel {
    fn dim(&self) -> usize {
        match self {
            BaselineModel::Gm(m) => m.dim(),
            BaselineModel::Kde(m) => m.dim(),
            BaselineModel::Mp(m) => m.dim(),
        }
    }

    fn log_density(&self, z: &[f64]) -> Result<f64> {
        baseline_log_density(self, z)
    }
}

pub fn baseline_log_density(model: &BaselineModel, z: &[f64]) -> Result<f64> {
    match model {
        BaselineModel::Gm(m) => m.log_density(z),
        BaselineModel::Kde(m) => m.log_density(z),
        BaselineModel::Mp(m) => m.log_density(z),
    }
}

/// Symmetric PSD matrix `U diag(lambda) U^T` restricted to its retained eigenpairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct EigenCov {
    pub basis: DMatrix<f64>,
    pub lambdas: Vec<f64>,
}

impl EigenCov {
    pub fn full(cov: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new((cov + cov.transpose()) * 0.5);
        EigenCov {
            basis: eig.eigenvectors,
            lambdas: eig.eigenvalues.iter().map(|l| l.max(0.0)).collect(),
        }
    }

    /// The `rank` leading eigenpairs, dropping numerically zero ones.
    pub fn leading(cov: &DMatrix<f64>, rank: usize) -> Self {
        let eig = SymmetricEigen::new((cov + cov.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let keep: Vec<usize> = order
            .into_iter()
            .take(rank)
            .filter(|&k| eig.eigenvalues[k] > 1e-12 * top && eig.eigenvalues[k] > 0.0)
            .collect();
        let mut basis = DMatrix::zeros(cov.nrows(), keep.len());
        for (c, &k) in keep.iter().enumerate() {
            basis.set_column(c, &eig.eigenvectors.column(k));
        }
        EigenCov {
            basis,
            lambdas: keep.iter().map(|&k| eig.eigenvalues[k]).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn term(&self, r: &DVector<f64>) -> RidgedTerm {
        let proj = self.basis.tr_mul(r);
        let proj_sq: Vec<f64> = proj.iter().map(|p| p * p).collect();
        let rest_sq = (r.norm_squared() - proj_sq.iter().sum::<f64>()).max(0.0);
        RidgedTerm {
            lambdas: self.lambdas.clone(),
            proj_sq,
            rest_sq,
            rest_dim: self.dim() - self.lambdas.len(),
        }
    }

    pub fn log_density(&self, r: &DVector<f64>, w: f64) -> f64 {
        self.term(r).log_density(w).0
    }

    /// `U diag(lambda) U^T` as a dense matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.lambdas.len(), |r, c| self.basis[(r, c)] * self.lambdas[c]);
        scaled * self.basis.transpose()
    }
}

/// `ln N(r | 0, U diag(lambda) U^T + w I)` with the residual pre-projected onto `U`.
#[derive(Clone, Debug)]
pub(crate) struct RidgedTerm {
    lambdas: Vec<f64>,
    proj_sq: Vec<f64>,
    rest_sq: f64,
    rest_dim: usize,
}

impl RidgedTerm {
    /// Log density and its derivative with respect to `w`.
    pub fn log_density(&self, w: f64) -> (f64, f64) {
        let dim = (self.lambdas.len() + self.rest_dim) as f64;
        let mut value = dim * LN_2PI;
        let mut deriv = 0.0;
        for (&l, &p) in self.lambdas.iter().zip(&self.proj_sq) {
            let s = l + w;
            value += s.ln() + p / s;
            deriv += 1.0 / s - p / (s * s);
        }
        if self.rest_dim > 0 {
            value += self.rest_dim as f64 * w.ln() + self.rest_sq / w;
            deriv += self.rest_dim as f64 / w - self.rest_sq / (w * w);
        }
        (-0.5 * value, -0.5 * deriv)
    }
}

/// Leave-one-out objective `sum_j ln sum_k exp(c_jk) N_jk(w)` over precomputed terms.
pub(crate) struct LooTerms {
    pub rows: Vec<Vec<(f64, RidgedTerm)>>,
}

impl LooTerms {
    /// Value and derivative with respect to `ln w`.
    pub fn evaluate(&self, w: f64) -> (f64, f64) {
        let per_row: Vec<(f64, f64)> = self
            .rows
            .par_iter()
            .map(|row| {
                let parts: Vec<(f64, f64)> = row
                    .iter()
                    .map(|(c, t)| {
                        let (v, d) = t.log_density(w);
                        (c + v, d)
                    })
                    .collect();
                let logs: Vec<f64> = parts.iter().map(|p| p.0).collect();
                let lse = log_sum_exp(&logs);
                let grad: f64 = parts.iter().map(|(v, d)| (v - lse).exp() * d).sum();
                (lse, grad * w)
            })
            .collect();
        per_row.iter().fold((0.0, 0.0), |acc, r| (acc.0 + r.0, acc.1 + r.1))
    }
}

pub(crate) const RIDGE_STEPS: usize = 200;

/// Gradient ascent on `u = ln w` with an adaptive step, kept inside `[lo, hi]`.
///
/// `objective` returns the value and its derivative with respect to `u`.
pub(crate) fn maximize_log_ridge(objective: impl Fn(f64) -> (f64, f64), w0: f64, lo: f64, hi: f64) -> f64 {
    let (ulo, uhi) = (lo.ln(), hi.ln());
    let mut u = w0.ln().clamp(ulo, uhi);
    let (mut value, mut grad) = objective(u.exp());
    if !value.is_finite() {
        return u.exp();
    }
    let mut eta = 0.5 / grad.abs().max(1e-300);
    for _ in 0..RIDGE_STEPS {
        if grad == 0.0 || eta * grad.abs() < 1e-10 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let cand = (u + eta * grad).clamp(ulo, uhi);
            if cand == u {
                break;
            }
            let (v, g) = objective(cand.exp());
            if v.is_finite() && v > value {
                u = cand;
                value = v;
                grad = g;
                eta *= 1.5;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    u.exp()
}

/// Mean per-dimension variance, or 1 for constant data.
pub(crate) fn data_scale(z: &DMatrix<f64>) -> f64 {
    let n = z.ncols() as f64;
    let mean = z.column_mean();
    let s = z.column_iter().map(|c| (c - &mean).norm_squared()).sum::<f64>() / (n * z.nrows() as f64);
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

pub(crate) fn check_data(z: &DMatrix<f64>, min_points: usize) -> Result<()> {
    if z.nrows() == 0 || z.ncols() < min_points {
        return crate::error::invalid(format!("need at least {min_points} points of positive dimension"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return crate::error::invalid("data contains non-finite values");
    }
    Ok(())
}

pub(crate) fn check_point(dim: usize, z: &[f64]) -> Result<DVector<f64>> {
    if z.len() != dim {
        return crate::error::invalid(format!("point has dimension {}, model has {dim}", z.len()));
    }
    Ok(DVector::from_column_slice(z))
}
