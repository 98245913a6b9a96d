//! Train-only preprocessing: identity, per-dimension scaling, or whitening.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::sample_covariance;

/// Relative eigenvalue floor used when whitening.
pub const WHITEN_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreprocMode {
    Raw,
    Scaled,
    Whitened,
}

impl PreprocMode {
    pub const ALL: [PreprocMode; 3] = [PreprocMode::Raw, PreprocMode::Scaled, PreprocMode::Whitened];

    pub fn tag(self) -> &'static str {
        match self {
            PreprocMode::Raw => "r",
            PreprocMode::Scaled => "s",
            PreprocMode::Whitened => "w",
        }
    }
}

impl fmt::Display for PreprocMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PreprocMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r" | "raw" => Ok(PreprocMode::Raw),
            "s" | "scaled" => Ok(PreprocMode::Scaled),
            "w" | "whitened" => Ok(PreprocMode::Whitened),
            _ => invalid(format!("unknown preprocessing '{s}'")),
        }
    }
}

/// `y = transform * (z - shift)`; densities in `y` space plus `log_abs_det` give raw-space densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub mode: PreprocMode,
    pub shift: DVector<f64>,
    pub transform: DMatrix<f64>,
    pub log_abs_det: f64,
    /// Dimensions with zero training variance (scaled) or floored eigenvalues (whitened).
    pub flagged: Vec<usize>,
}

impl Preprocessing {
    pub fn apply(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.nrows() != self.shift.len() {
            return invalid(format!("data has dimension {}, preprocessing expects {}", z.nrows(), self.shift.len()));
        }
        let mut centered = z.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.shift;
        }
        Ok(&self.transform * centered)
    }
}

/// Fits the transform on `train` and returns it with the transformed training data.
pub fn preprocess(train: &DMatrix<f64>, mode: PreprocMode) -> Result<(Preprocessing, DMatrix<f64>)> {
    let (dd, n) = train.shape();
    if dd == 0 || n == 0 {
        return invalid("cannot preprocess an empty training set");
    }
    let mean = train.column_mean();
    let (shift, transform, log_abs_det, flagged) = match mode {
        PreprocMode::Raw => (DVector::zeros(dd), DMatrix::identity(dd, dd), 0.0, Vec::new()),
        PreprocMode::Scaled => {
            let mut flagged = Vec::new();
            let scales: Vec<f64> = (0..dd)
                .map(|l| {
                    let var = train.row(l).iter().map(|v| (v - mean[l]).powi(2)).sum::<f64>() / n as f64;
                    if var > 0.0 {
                        1.0 / var.sqrt()
                    } else {
                        flagged.push(l);
                        1.0
                    }
                })
                .collect();
            let lad = scales.iter().map(|s| s.ln()).sum();
            (mean, DMatrix::from_diagonal(&DVector::from_vec(scales)), lad, flagged)
        }
        PreprocMode::Whitened => {
            let cov = sample_covariance(train);
            let eig = SymmetricEigen::new((&cov + cov.transpose()) * 0.5);
            let top = eig.eigenvalues.max();
            if !(top > 0.0) {
                return invalid("training data has zero covariance");
            }
            let floor = WHITEN_FLOOR * top;
            let mut flagged = Vec::new();
            let lambdas: Vec<f64> = eig
                .eigenvalues
                .iter()
                .enumerate()
                .map(|(k, &l)| {
                    if l < floor {
                        flagged.push(k);
                        floor
                    } else {
                        l
                    }
                })
                .collect();
            let inv_sqrt = DVector::from_iterator(dd, lambdas.iter().map(|l| 1.0 / l.sqrt()));
            let transform = DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
            let lad = -0.5 * lambdas.iter().map(|l| l.ln()).sum::<f64>();
            (mean, transform, lad, flagged)
        }
    };
    let pre = Preprocessing {
        mode,
        shift,
        transform,
        log_abs_det,
        flagged,
    };
    let out = pre.apply(train)?;
    Ok((pre, out))
}
