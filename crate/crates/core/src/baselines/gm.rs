//! Gaussian mixture over k-means clusters with a leave-one-out tuned ridge.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_data, check_point, data_scale, kmeans, maximize_log_ridge, EigenCov, LooTerms};
use crate::error::{invalid, Result};
use crate::linalg::log_sum_exp;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GmComponent {
    /// `N_k / N`.
    pub weight: f64,
    pub mean: DVector<f64>,
    /// Maximum-likelihood cluster covariance before the ridge.
    pub scatter: DMatrix<f64>,
    eig: EigenCov,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianMixtureModel {
    components: Vec<GmComponent>,
    ridge: f64,
    dim: usize,
}

struct Cluster {
    members: Vec<usize>,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

fn clusters(z: &DMatrix<f64>, labels: &[usize]) -> Result<Vec<Cluster>> {
    if labels.len() != z.ncols() {
        return invalid("one label per data point is required");
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                return invalid(format!("cluster {c} is empty"));
            }
            let n = members.len() as f64;
            let mean = members.iter().map(|&i| z.column(i).into_owned()).sum::<DVector<f64>>() / n;
            let mut scatter = DMatrix::zeros(z.nrows(), z.nrows());
            for &i in &members {
                let r = z.column(i) - &mean;
                scatter += &r * r.transpose();
            }
            Ok(Cluster {
                members,
                mean,
                scatter: scatter / n,
            })
        })
        .collect()
}

fn loo_terms(z: &DMatrix<f64>, cl: &[Cluster]) -> LooTerms {
    let total = z.ncols() as f64;
    let eigs: Vec<EigenCov> = cl.iter().map(|c| EigenCov::full(&c.scatter)).collect();
    let mut rows = vec![Vec::new(); z.ncols()];
    for (k, c) in cl.iter().enumerate() {
        let log_weight = (c.members.len() as f64 / total).ln();
        for (j, row) in rows.iter_mut().enumerate() {
            let zj = z.column(j).into_owned();
            if !c.members.contains(&j) {
                row.push((log_weight, eigs[k].term(&(&zj - &c.mean))));
                continue;
            }
            let n = c.members.len() as f64;
            if c.members.len() == 1 {
                // nothing remains of the cluster once z^j is removed
                continue;
            }
            let d = &zj - &c.mean;
            let mean = (&c.mean * n - &zj) / (n - 1.0);
            let scatter = (&c.scatter * n - &d * d.transpose() * (n / (n - 1.0))) / (n - 1.0);
            row.push((log_weight, EigenCov::full(&scatter).term(&(&zj - mean))));
        }
    }
    LooTerms { rows }
}

/// Leave-one-out log density of a clustering at ridge `w`, and its derivative in `ln w`.
///
/// Mixture weights stay at `N_k / N`; only the cluster containing the left-out point is
/// downdated. A singleton cluster contributes nothing to its own point's term.
pub fn gm_loo_objective(z: &DMatrix<f64>, labels: &[usize], w: f64) -> Result<(f64, f64)> {
    let cl = clusters(z, labels)?;
    Ok(loo_terms(z, &cl).evaluate(w))
}

/// K-means partition, per-cluster ML Gaussians and a shared ridge maximizing the LOO density.
pub fn fit_gm(z: &DMatrix<f64>, k: usize, seed: u64) -> Result<GaussianMixtureModel> {
    check_data(z, 2)?;
    if k == 0 || k > z.ncols() {
        return invalid(format!("cluster count {k} outside 1..={}", z.ncols()));
    }
    let labels = kmeans(z, k, seed)?;
    let cl = clusters(z, &labels)?;
    let terms = loo_terms(z, &cl);
    let scale = data_scale(z);
    let w = maximize_log_ridge(|w| terms.evaluate(w), 0.1 * scale, 1e-10 * scale, 1e4 * scale);
    GaussianMixtureModel::from_labels(z, &labels, w)
}

impl GaussianMixtureModel {
    /// Mixture from a fixed clustering and ridge.
    pub fn from_labels(z: &DMatrix<f64>, labels: &[usize], ridge: f64) -> Result<Self> {
        check_data(z, 1)?;
        if !(ridge > 0.0) || !ridge.is_finite() {
            return invalid("ridge must be positive and finite");
        }
        let total = z.ncols() as f64;
        let components = clusters(z, labels)?
            .into_iter()
            .map(|c| GmComponent {
                weight: c.members.len() as f64 / total,
                eig: EigenCov::full(&c.scatter),
                mean: c.mean,
                scatter: c.scatter,
            })
            .collect();
        Ok(GaussianMixtureModel {
            components,
            ridge,
            dim: z.nrows(),
        })
    }

    pub fn components(&self) -> &[GmComponent] {
        &self.components
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Covariance of component `k`, ridge included.
    pub fn cov(&self, k: usize) -> DMatrix<f64> {
        &self.components[k].scatter + DMatrix::identity(self.dim, self.dim) * self.ridge
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        let z = check_point(self.dim, z)?;
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.eig.log_density(&(&z - &c.mean), self.ridge))
            .collect();
        Ok(log_sum_exp(&terms))
    }
}
