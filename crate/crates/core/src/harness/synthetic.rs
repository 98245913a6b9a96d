//! Seeded synthetic datasets used by the tests and the CLI.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::data::{Dataset, SourceFormat};
use crate::error::{invalid, Result};

fn synthetic(name: &str, features: DMatrix<f64>) -> Dataset {
    Dataset {
        name: name.to_string(),
        features,
        source_format: SourceFormat::Synthetic,
    }
}

/// Noise level of the `synth:curve` dataset.
pub const CURVE_NOISE: f64 = 0.02;

/// Noisy three-quarter circle: a one-dimensional latent curve in the plane.
pub fn curve(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = DMatrix::zeros(2, n);
    for c in 0..n {
        let t = rng.random_range(0.0..1.5 * PI);
        let e0: f64 = StandardNormal.sample(&mut rng);
        let e1: f64 = StandardNormal.sample(&mut rng);
        features[(0, c)] = t.cos() + noise * e0;
        features[(1, c)] = t.sin() + noise * e1;
    }
    synthetic("curve", features)
}

/// Standard normal samples in `dim` dimensions.
pub fn gaussian(dim: usize, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthetic("gaussian", DMatrix::from_fn(dim, n, |_, _| StandardNormal.sample(&mut rng)))
}

/// `pairs` standard normal points, each present twice.
pub fn paired_duplicates(pairs: usize, dim: usize, seed: u64) -> Dataset {
    let base = gaussian(dim, pairs, seed).features;
    synthetic("pairs", DMatrix::from_fn(dim, 2 * pairs, |r, c| base[(r, c / 2)]))
}

/// Builds a dataset from a `synth:` specifier such as `synth:curve:200:7`.
pub fn from_spec(spec: &str) -> Result<Dataset> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |i: usize, default: u64| -> Result<u64> {
        parts.get(i).map_or(Ok(default), |s| {
            s.parse().map_err(|_| crate::Error::InvalidInput(format!("bad number '{s}' in '{spec}'")))
        })
    };
    match parts.as_slice() {
        ["synth", "curve", ..] => Ok(curve(num(2, 240)? as usize, CURVE_NOISE, num(3, 0)?)),
        ["synth", "gaussian", ..] => Ok(gaussian(3, num(2, 500)? as usize, num(3, 0)?)),
        ["synth", "pairs", ..] => Ok(paired_duplicates(num(2, 10)? as usize, 2, num(3, 0)?)),
        _ => invalid(format!("unknown synthetic dataset '{spec}'")),
    }
}
