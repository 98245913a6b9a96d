//! Manifold Parzen windows: one low-rank-plus-ridge Gaussian per data point.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_data, check_point, data_scale, maximize_log_ridge, EigenCov, LooTerms};
use crate::error::{invalid, Result};
use crate::linalg::log_sum_exp;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifoldParzenModel {
    centers: DMatrix<f64>,
    local: Vec<EigenCov>,
    ridge: f64,
    neighbor_count: usize,
    rank: usize,
    /// Some local scatter had fewer than `rank` usable eigenpairs.
    pub rank_deficient: bool,
}

/// Indices of the `r` nearest other points to `z^i`, ties broken by index.
fn neighbours(z: &DMatrix<f64>, i: usize, r: usize) -> Vec<usize> {
    let zi = z.column(i);
    let mut others: Vec<(f64, usize)> = (0..z.ncols())
        .filter(|&j| j != i)
        .map(|j| ((z.column(j) - zi).norm_squared(), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(r).map(|(_, j)| j).collect()
}

/// Scatter of `z^i - z^j` over the `r` nearest neighbours, normalized by the kernel mass `r`.
pub fn local_scatter(z: &DMatrix<f64>, i: usize, r: usize) -> Result<DMatrix<f64>> {
    if i >= z.ncols() || r == 0 || r >= z.ncols() {
        return invalid(format!("neighbour count {r} must lie in 1..{}", z.ncols()));
    }
    let dd = z.nrows();
    let mut s = DMatrix::zeros(dd, dd);
    for j in neighbours(z, i, r) {
        let diff = z.column(i) - z.column(j);
        s += &diff * diff.transpose();
    }
    Ok(s / r as f64)
}

fn loo_terms(z: &DMatrix<f64>, local: &[EigenCov]) -> LooTerms {
    let n = z.ncols();
    let log_weight = -((n - 1) as f64).ln();
    let rows = (0..n)
        .map(|j| {
            (0..n)
                .filter(|&i| i != j)
                .map(|i| (log_weight, local[i].term(&(z.column(j) - z.column(i)))))
                .collect()
        })
        .collect();
    LooTerms { rows }
}

fn local_covariances(z: &DMatrix<f64>, d: usize, r: usize) -> Result<Vec<EigenCov>> {
    (0..z.ncols())
        .map(|i| Ok(EigenCov::leading(&local_scatter(z, i, r)?, d)))
        .collect()
}

/// Leave-one-out log density at ridge `w`, and its derivative in `ln w`.
pub fn mp_loo_objective(z: &DMatrix<f64>, d: usize, r: usize, w: f64) -> Result<(f64, f64)> {
    check_data(z, 2)?;
    let local = local_covariances(z, d, r)?;
    Ok(loo_terms(z, &local).evaluate(w))
}

pub fn fit_mp(z: &DMatrix<f64>, d: usize, r: usize) -> Result<ManifoldParzenModel> {
    check_data(z, 2)?;
    let (dd, n) = z.shape();
    if d == 0 || d >= dd {
        return invalid(format!("rank {d} must lie in 1..{dd}"));
    }
    if r == 0 || r >= n {
        return invalid(format!("neighbour count {r} must lie in 1..{n}"));
    }
    let local = local_covariances(z, d, r)?;
    let rank_deficient = local.iter().any(|e| e.lambdas.len() < d);
    let terms = loo_terms(z, &local);
    let scale = data_scale(z);
    let ridge = maximize_log_ridge(|w| terms.evaluate(w), 0.1 * scale, 1e-10 * scale, 1e4 * scale);
    Ok(ManifoldParzenModel {
        centers: z.clone(),
        local,
        ridge,
        neighbor_count: r,
        rank: d,
        rank_deficient,
    })
}

impl ManifoldParzenModel {
    pub fn dim(&self) -> usize {
        self.centers.nrows()
    }

    pub fn len(&self) -> usize {
        self.centers.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.ncols() == 0
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn neighbor_count(&self) -> usize {
        self.neighbor_count
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    /// `V_i` with columns scaled by the square roots of the local eigenvalues.
    pub fn factor(&self, i: usize) -> DMatrix<f64> {
        let e = &self.local[i];
        DMatrix::from_fn(e.dim(), e.lambdas.len(), |r, c| e.basis[(r, c)] * e.lambdas[c].sqrt())
    }

    /// Dense covariance `w I + V_i V_i^T` of component `i`.
    pub fn cov(&self, i: usize) -> DMatrix<f64> {
        self.local[i].to_matrix() + DMatrix::identity(self.dim(), self.dim()) * self.ridge
    }

    pub fn with_ridge(&self, ridge: f64) -> Result<Self> {
        if !(ridge > 0.0) || !ridge.is_finite() {
            return invalid("ridge must be positive and finite");
        }
        Ok(ManifoldParzenModel { ridge, ..self.clone() })
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        let z = check_point(self.dim(), z)?;
        let logs: Vec<f64> = self
            .local
            .iter()
            .zip(self.centers.column_iter())
            .map(|(e, c)| e.log_density(&(&z - c), self.ridge))
            .collect();
        Ok(log_sum_exp(&logs) - (self.len() as f64).ln())
    }
}
