//! Quick oracle checks runnable from the command line.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::methods::{fit_method, FittedModel, Method};
use super::synthetic::curve;
use crate::density::{objective_loo, objective_lz, LogDensity, ModelState, ObjectiveValue};
use crate::error::Result;
use crate::gp::GpConditioned;
use crate::kernel::{HyperLayout, Hyperparams, LatentConfig};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, result: Result<(bool, String)>) -> Check {
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

fn random_model(rng: &mut ChaCha8Rng, n: usize, d: usize, dd: usize, stochastic: bool) -> Result<ModelState> {
    let x = LatentConfig::new(DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.5..1.5)))?;
    let z = DMatrix::from_fn(dd, n, |_, _| rng.random_range(-2.0..2.0));
    let h = Hyperparams::new(
        (0..d).map(|_| rng.random_range(0.4..2.0)).collect(),
        rng.random_range(0.5..2.0),
        rng.random_range(0.05..0.3),
        (0..d).map(|_| if stochastic { rng.random_range(0.05..0.5) } else { 0.0 }).collect(),
    )?;
    ModelState::new(x, h, z)
}

/// Riemann sum of a 2-D density over a box.
pub fn quadrature_2d(model: &dyn LogDensity, lo: [f64; 2], hi: [f64; 2], steps: usize) -> Result<f64> {
    let h = [(hi[0] - lo[0]) / steps as f64, (hi[1] - lo[1]) / steps as f64];
    let mut total = 0.0;
    for a in 0..steps {
        for b in 0..steps {
            let p = [lo[0] + (a as f64 + 0.5) * h[0], lo[1] + (b as f64 + 0.5) * h[1]];
            total += model.log_density(&p)?.exp();
        }
    }
    Ok(total * h[0] * h[1])
}

fn fd_error(model: &ModelState, f: fn(&ModelState) -> Result<ObjectiveValue>) -> Result<f64> {
    let base = f(model)?;
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let coords = model.latents.coords().clone();
    let mut fd = Vec::new();
    for i in 0..coords.len() {
        let mut p = coords.clone();
        let mut m = coords.clone();
        p[i] += step;
        m[i] -= step;
        let vp = f(&ModelState { latents: LatentConfig::new(p)?, ..model.clone() })?.value;
        let vm = f(&ModelState { latents: LatentConfig::new(m)?, ..model.clone() })?.value;
        fd.push((vp - vm) / (2.0 * step));
    }
    let rel = |a: &[f64], b: &[f64]| {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        diff / b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8)
    };
    worst = worst.max(rel(base.grad_latents.as_slice(), &fd));
    let layout = HyperLayout::for_hyp(&model.hyp);
    let log = model.hyp.to_log();
    let mut fd = Vec::new();
    for i in 0..log.len() {
        let mut p = log.clone();
        let mut m = log.clone();
        p[i] += step;
        m[i] -= step;
        let vp = f(&ModelState { hyp: Hyperparams::from_log(layout, &p)?, ..model.clone() })?.value;
        let vm = f(&ModelState { hyp: Hyperparams::from_log(layout, &m)?, ..model.clone() })?.value;
        fd.push((vp - vm) / (2.0 * step));
    }
    Ok(worst.max(rel(&base.grad_hyp, &fd)))
}

/// Runs the quick checks; each one reports pass or fail with a short detail string.
pub fn run_selftest(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    out.push(check("deterministic limit", (|| {
        let m = random_model(&mut rng, 6, 2, 3, false)?;
        let gp = GpConditioned::condition(&m.latents, &m.targets, &m.hyp)?;
        let x = m.latents.point(2);
        let det = gp.predict_det(&x)?;
        let rd = gp.predict_gauss(&x, &[1e-12, 1e-12])?;
        let err = (&det.mean - &rd.mean).amax().max((det.cov.to_matrix(3) - rd.cov.to_matrix(3)).amax());
        Ok((err <= 1e-6, format!("max deviation {err:.2e}")))
    })()));

    for (name, f, stochastic) in [
        ("Lz gradient", objective_lz as fn(&ModelState) -> Result<ObjectiveValue>, false),
        ("LOO gradient (Dirac)", objective_loo, false),
        ("LOO gradient (Gaussian)", objective_loo, true),
    ] {
        out.push(check(name, (|| {
            let mut worst: f64 = 0.0;
            for _ in 0..3 {
                let m = random_model(&mut rng, 6, 2, 2, stochastic)?;
                worst = worst.max(fd_error(&m, f)?);
            }
            Ok((worst <= 1e-4, format!("worst relative error {worst:.2e}")))
        })()));
    }

    out.push(check("moment matching", (|| {
        let m = random_model(&mut rng, 5, 1, 2, true)?;
        let gp = GpConditioned::condition(&m.latents, &m.targets, &m.hyp)?;
        let xs = m.latents.point(0);
        let pred = gp.predict_gauss(&xs, &m.hyp.latent_var)?;
        let samples = 200_000;
        let mut mean = DVector::zeros(2);
        let mut second = DMatrix::zeros(2, 2);
        for _ in 0..samples {
            let e: f64 = StandardNormal.sample(&mut rng);
            let x = [xs[0] + m.hyp.latent_var[0].sqrt() * e];
            let p = gp.predict_det(&x)?;
            let s = p.cov.to_matrix(2);
            mean += &p.mean;
            second += s + &p.mean * p.mean.transpose();
        }
        mean /= samples as f64;
        let cov = second / samples as f64 - &mean * mean.transpose();
        let em = (&pred.mean - &mean).norm() / mean.norm().max(1e-12);
        let ec = (pred.cov.to_matrix(2) - &cov).norm() / cov.norm();
        Ok((em <= 0.02 && ec <= 0.05, format!("mean {em:.2e}, covariance {ec:.2e}")))
    })()));

    out.push(check("normalization", (|| {
        let data = curve(30, 0.05, seed).features;
        let mut worst: f64 = 0.0;
        for method in [
            Method::Lpo { d: 1, leave_out: 2, stochastic: true },
            Method::Gm { k: 3 },
            Method::Kde,
            Method::Mp { d: 1, r: 4 },
        ] {
            let model: FittedModel = fit_method(&method, &data, 20, seed)?;
            let mass = quadrature_2d(&model, [-3.0, -3.0], [3.0, 3.0], 600)?;
            worst = worst.max((mass - 1.0).abs());
        }
        Ok((worst <= 1e-2, format!("worst |mass - 1| {worst:.2e}")))
    })()));

    out
}
