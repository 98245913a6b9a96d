//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use gplvm_density::density::{ModelState, ObjectiveValue};
use gplvm_density::gp::{Covariance, GpConditioned};
use gplvm_density::kernel::{ard_kernel, HyperLayout, Hyperparams, LatentConfig};
use gplvm_density::linalg::LN_2PI;
use gplvm_density::Result;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random instance with latents in a box and moderate hyperparameters.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    dd: usize,
    stochastic: bool,
) -> (LatentConfig, DMatrix<f64>, Hyperparams) {
    let x = LatentConfig::new(DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.5..1.5))).unwrap();
    let z = DMatrix::from_fn(dd, n, |_, _| rng.random_range(-2.0..2.0));
    let h = Hyperparams::new(
        (0..d).map(|_| rng.random_range(0.4..2.0)).collect(),
        rng.random_range(0.5..2.0),
        rng.random_range(0.02..0.3),
        (0..d)
            .map(|_| if stochastic { rng.random_range(0.05..0.5) } else { 0.0 })
            .collect(),
    )
    .unwrap();
    (x, z, h)
}

pub fn random_model(rng: &mut ChaCha8Rng, n: usize, d: usize, dd: usize, stochastic: bool) -> ModelState {
    let (x, z, h) = random_instance(rng, n, d, dd, stochastic);
    ModelState::new(x, h, z).unwrap()
}

/// Draws `x ~ N(center, diag(var))`.
pub fn sample_input(rng: &mut ChaCha8Rng, center: &[f64], var: &[f64]) -> Vec<f64> {
    center
        .iter()
        .zip(var)
        .map(|(c, v)| {
            let e: f64 = StandardNormal.sample(rng);
            c + v.sqrt() * e
        })
        .collect()
}

/// Monte-Carlo estimates of `E[k]` and `E[k k']` under `x ~ N(xstar, V)`,
/// evaluating the kernel one pair at a time.
pub fn mc_kernel_moments(
    rng: &mut ChaCha8Rng,
    x: &LatentConfig,
    xstar: &[f64],
    hyp: &Hyperparams,
    samples: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len();
    let mut k_sum = DVector::zeros(n);
    let mut kk_sum = DMatrix::zeros(n, n);
    for _ in 0..samples {
        let xs = sample_input(rng, xstar, &hyp.latent_var);
        let k = DVector::from_iterator(
            n,
            (0..n).map(|i| ard_kernel(&x.point(i), &xs, false, hyp).unwrap()),
        );
        kk_sum += &k * k.transpose();
        k_sum += k;
    }
    (k_sum / samples as f64, kk_sum / samples as f64)
}

/// Monte-Carlo output moments of the GP under a Gaussian input, using the law
/// of total covariance over exact deterministic-input predictions.
pub fn mc_output_moments(
    rng: &mut ChaCha8Rng,
    gp: &GpConditioned,
    xstar: &[f64],
    latent_var: &[f64],
    samples: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let dd = gp.output_dim();
    let mut mean_sum = DVector::zeros(dd);
    let mut outer_sum = DMatrix::zeros(dd, dd);
    let mut var_sum = 0.0;
    for _ in 0..samples {
        let xs = sample_input(rng, xstar, latent_var);
        let p = gp.predict_det(&xs).unwrap();
        let Covariance::Spherical(s) = p.cov else { unreachable!() };
        var_sum += s;
        outer_sum += &p.mean * p.mean.transpose();
        mean_sum += p.mean;
    }
    let k = samples as f64;
    let mean = mean_sum / k;
    let cov = outer_sum / k - &mean * mean.transpose() + DMatrix::identity(dd, dd) * (var_sum / k);
    (mean, cov)
}

/// Log density of `N(z | mean, cov)` through an explicit inverse and determinant.
pub fn naive_gaussian_log_density(z: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let r = z - mean;
    let inv = cov.clone().try_inverse().unwrap();
    -0.5 * (z.len() as f64 * LN_2PI + cov.determinant().ln() + r.dot(&(inv * &r)))
}

/// `ln (1/|S|) sum_{j in S} exp(l_j)` by direct summation (no max shift).
pub fn naive_log_mean_exp(values: &[f64]) -> f64 {
    (values.iter().map(|v| v.exp()).sum::<f64>() / values.len() as f64).ln()
}

/// Mean of component j from a GP freshly conditioned without pair i.
pub fn recondition_without(model: &ModelState, i: usize, j: usize) -> DVector<f64> {
    let keep: Vec<usize> = (0..model.len()).filter(|&c| c != i).collect();
    let coords = model.latents.coords().select_columns(&keep);
    let targets = model.targets.select_columns(&keep);
    let gp = GpConditioned::condition(&LatentConfig::new(coords).unwrap(), &targets, &model.hyp).unwrap();
    let xj = model.latents.point(j);
    if model.hyp.is_deterministic() {
        gp.predict_det(&xj).unwrap().mean
    } else {
        let kt = gplvm_density::kernel::expected_k(gp.latents(), &xj, &model.hyp).unwrap();
        gp.weights().tr_mul(&kt)
    }
}

/// `ln N(z^i | mu_j^{-i}, Sigma_j)` with every mean recomputed by reconditioning.
pub fn recompute_pair_log_density(model: &ModelState, full: &GpConditioned, i: usize, j: usize) -> f64 {
    let mean = recondition_without(model, i, j);
    let xj = model.latents.point(j);
    let cov = if model.hyp.is_deterministic() {
        full.predict_det(&xj).unwrap().cov.to_matrix(model.data_dim())
    } else {
        full.predict_gauss(&xj, &model.hyp.latent_var)
            .unwrap()
            .cov
            .to_matrix(model.data_dim())
    };
    naive_gaussian_log_density(&model.targets.column(i).clone_owned(), &mean, &cov)
}

/// Relative Frobenius error `|a - b| / |b|`.
pub fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Central-difference step used by the gradient suites.
pub const FD_STEP: f64 = 1e-5;

fn with_latents(model: &ModelState, coords: DMatrix<f64>) -> ModelState {
    ModelState {
        latents: LatentConfig::new(coords).unwrap(),
        ..model.clone()
    }
}

fn with_log_hyp(model: &ModelState, log: &[f64]) -> ModelState {
    let layout = HyperLayout::for_hyp(&model.hyp);
    ModelState {
        hyp: Hyperparams::from_log(layout, log).unwrap(),
        ..model.clone()
    }
}

/// Relative error of an analytic gradient block against central differences.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}

/// Relative errors (latent block, hyperparameter block) of the analytic gradient.
pub fn fd_gradient_errors(model: &ModelState, f: &dyn Fn(&ModelState) -> Result<ObjectiveValue>) -> (f64, f64) {
    let base = f(model).unwrap();
    assert!(base.value.is_finite());

    let coords = model.latents.coords().clone();
    let mut fd_x = Vec::new();
    for idx in 0..coords.len() {
        let mut plus = coords.clone();
        let mut minus = coords.clone();
        plus[idx] += FD_STEP;
        minus[idx] -= FD_STEP;
        let vp = f(&with_latents(model, plus)).unwrap().value;
        let vm = f(&with_latents(model, minus)).unwrap().value;
        fd_x.push((vp - vm) / (2.0 * FD_STEP));
    }

    let log = model.hyp.to_log();
    let mut fd_h = Vec::new();
    for idx in 0..log.len() {
        let mut plus = log.clone();
        let mut minus = log.clone();
        plus[idx] += FD_STEP;
        minus[idx] -= FD_STEP;
        let vp = f(&with_log_hyp(model, &plus)).unwrap().value;
        let vm = f(&with_log_hyp(model, &minus)).unwrap().value;
        fd_h.push((vp - vm) / (2.0 * FD_STEP));
    }
    let gx: Vec<f64> = base.grad_latents.iter().copied().collect();
    (rel_err(&gx, &fd_x), rel_err(&base.grad_hyp, &fd_h))
}
