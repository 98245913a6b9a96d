//! ARD squared-exponential covariance, kernel matrices and their factorization,
//! and the closed-form kernel expectations under a Gaussian input.
//!
//! The expectations are taken w.r.t. `x ~ N(x*, V)` with diagonal `V` shared by
//! all latent points. With squared length scales `W`:
//!
//! * `E[k(x^i, x)] = sf2 |V W^-1 + I|^-1/2 exp(-1/2 (x^i - x*)' (V + W)^-1 (x^i - x*))`
//! * `E[k(x^i, x) k(x^j, x)] = k(x^i, x*) k(x^j, x*) |2 V W^-1 + I|^-1/2 exp(+1/2 m' Q^-1 m)`
//!   with `m = (x^i + x^j)/2 - x*` and `Q = W V^-1 W / 4 + W / 2`.
//!
//! Every matrix involved is diagonal, so both reduce to per-dimension sums.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// GP and latent-mixture hyperparameters on their natural (positive) scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Diagonal of `W`, one squared length scale per latent dimension.
    pub lengthscales_sq: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
    /// Diagonal of `V_x`; all zeros selects the Dirac (deterministic) latent mixture.
    pub latent_var: Vec<f64>,
}

impl Hyperparams {
    pub fn new(
        lengthscales_sq: Vec<f64>,
        signal_var: f64,
        noise_var: f64,
        latent_var: Vec<f64>,
    ) -> Result<Self> {
        let hyp = Hyperparams {
            lengthscales_sq,
            signal_var,
            noise_var,
            latent_var,
        };
        hyp.validate()?;
        Ok(hyp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales_sq.is_empty() {
            return invalid("hyperparameters need at least one latent dimension");
        }
        if self.latent_var.len() != self.lengthscales_sq.len() {
            return invalid("latent_var and lengthscales_sq differ in length");
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !self.lengthscales_sq.iter().all(|&w| positive(w)) {
            return invalid("squared length scales must be finite and positive");
        }
        if !positive(self.signal_var) || !positive(self.noise_var) {
            return invalid("signal and noise variance must be finite and positive");
        }
        if !self.latent_var.iter().all(|&v| v.is_finite() && v >= 0.0) {
            return invalid("latent variances must be finite and non-negative");
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.lengthscales_sq.len()
    }

    /// True when every latent variance is exactly zero.
    pub fn is_deterministic(&self) -> bool {
        self.latent_var.iter().all(|&v| v == 0.0)
    }

    /// `d + 2` for the Dirac variant, `2d + 2` when latent variances are free.
    pub fn free_param_count(&self) -> usize {
        HyperLayout::for_hyp(self).len()
    }

    /// Prior variance of a noisy observation, `k(x, x)` including the noise term.
    pub fn k_star_star(&self) -> f64 {
        self.signal_var + self.noise_var
    }

    /// Log-domain free parameters in [`HyperLayout`] order.
    pub fn to_log(&self) -> Vec<f64> {
        let layout = HyperLayout::for_hyp(self);
        let mut out = Vec::with_capacity(layout.len());
        out.extend(self.lengthscales_sq.iter().map(|w| w.ln()));
        out.push(self.signal_var.ln());
        out.push(self.noise_var.ln());
        if layout.stochastic {
            out.extend(self.latent_var.iter().map(|v| v.ln()));
        }
        out
    }

    pub fn from_log(layout: HyperLayout, log: &[f64]) -> Result<Self> {
        if log.len() != layout.len() {
            return invalid(format!(
                "expected {} log hyperparameters, got {}",
                layout.len(),
                log.len()
            ));
        }
        let d = layout.latent_dim;
        let latent_var = if layout.stochastic {
            log[d + 2..].iter().map(|v| v.exp()).collect()
        } else {
            vec![0.0; d]
        };
        Hyperparams::new(
            log[..d].iter().map(|w| w.exp()).collect(),
            log[d].exp(),
            log[d + 1].exp(),
            latent_var,
        )
    }
}

/// Ordering of the log-domain hyperparameter vector:
/// `[ln W_1..d, ln sf2, ln sn2, ln V_1..d]`, the last block only when stochastic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperLayout {
    pub latent_dim: usize,
    pub stochastic: bool,
}

impl HyperLayout {
    pub fn for_hyp(hyp: &Hyperparams) -> Self {
        HyperLayout {
            latent_dim: hyp.latent_dim(),
            stochastic: !hyp.is_deterministic(),
        }
    }

    pub fn len(&self) -> usize {
        if self.stochastic {
            2 * self.latent_dim + 2
        } else {
            self.latent_dim + 2
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lengthscale(&self, l: usize) -> usize {
        l
    }

    pub fn signal(&self) -> usize {
        self.latent_dim
    }

    pub fn noise(&self) -> usize {
        self.latent_dim + 1
    }

    pub fn latent_var(&self, l: usize) -> Option<usize> {
        self.stochastic.then_some(self.latent_dim + 2 + l)
    }
}

/// Latent coordinates, one column per latent point (`d x N`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentConfig {
    coords: DMatrix<f64>,
}

impl LatentConfig {
    pub fn new(coords: DMatrix<f64>) -> Result<Self> {
        if coords.nrows() == 0 {
            return invalid("latent dimension must be at least 1");
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return invalid("latent coordinates must be finite");
        }
        Ok(LatentConfig { coords })
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DMatrix<f64> {
        self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.nrows()
    }

    pub fn len(&self) -> usize {
        self.coords.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.ncols() == 0
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.coords.column(i).iter().copied().collect()
    }
}

fn check_point(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return invalid(format!("latent point has dimension {}, expected {d}", x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("latent point has non-finite coordinates");
    }
    Ok(())
}

/// Scaled squared distance `(a - b)' diag(scale)^-1 (a - b)` between two columns.
#[inline]
pub(crate) fn scaled_sq_dist<'a>(
    a: impl Iterator<Item = &'a f64>,
    b: impl Iterator<Item = &'a f64>,
    scale: &[f64],
) -> f64 {
    a.zip(b)
        .zip(scale)
        .map(|((x, y), s)| {
            let diff = x - y;
            diff * diff / s
        })
        .sum()
}

/// ARD squared-exponential covariance between two latent points.
///
/// The noise term is added only when `same_index` is set, i.e. on the diagonal
/// of a training kernel matrix. Cross-covariances to test points pass `false`.
pub fn ard_kernel(xi: &[f64], xj: &[f64], same_index: bool, hyp: &Hyperparams) -> Result<f64> {
    let d = hyp.latent_dim();
    check_point(xi, d)?;
    check_point(xj, d)?;
    let r2 = scaled_sq_dist(xi.iter(), xj.iter(), &hyp.lengthscales_sq);
    let noise = if same_index { hyp.noise_var } else { 0.0 };
    Ok(hyp.signal_var * (-0.5 * r2).exp() + noise)
}

/// Full training kernel matrix `K` including the noise diagonal.
pub fn kernel_matrix(x: &LatentConfig, hyp: &Hyperparams) -> Result<DMatrix<f64>> {
    if x.dim() != hyp.latent_dim() {
        return invalid("latent dimension does not match hyperparameters");
    }
    let n = x.len();
    let c = x.coords();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = hyp.signal_var + hyp.noise_var;
        for j in 0..i {
            let r2 = scaled_sq_dist(c.column(i).iter(), c.column(j).iter(), &hyp.lengthscales_sq);
            let v = hyp.signal_var * (-0.5 * r2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Noise-free cross-covariance vector `k* = [k(x^i, x*)]_i`.
pub fn cross_cov(x: &LatentConfig, xstar: &[f64], hyp: &Hyperparams) -> Result<DVector<f64>> {
    check_point(xstar, hyp.latent_dim())?;
    if x.dim() != hyp.latent_dim() {
        return invalid("latent dimension does not match hyperparameters");
    }
    let c = x.coords();
    Ok(DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| {
            let r2 = scaled_sq_dist(c.column(i).iter(), xstar.iter(), &hyp.lengthscales_sq);
            hyp.signal_var * (-0.5 * r2).exp()
        }),
    ))
}

/// Expected cross-covariance vector `E[k(x^i, x)]` for `x ~ N(x*, V)`.
pub fn expected_k(x: &LatentConfig, xstar: &[f64], hyp: &Hyperparams) -> Result<DVector<f64>> {
    if hyp.is_deterministic() {
        return cross_cov(x, xstar, hyp);
    }
    check_point(xstar, hyp.latent_dim())?;
    if x.dim() != hyp.latent_dim() {
        return invalid("latent dimension does not match hyperparameters");
    }
    let widened: Vec<f64> = hyp
        .lengthscales_sq
        .iter()
        .zip(&hyp.latent_var)
        .map(|(w, v)| w + v)
        .collect();
    // |V W^-1 + I|^-1/2 on diagonal matrices
    let scale = hyp.signal_var
        * hyp
            .lengthscales_sq
            .iter()
            .zip(&widened)
            .map(|(w, wv)| (w / wv).sqrt())
            .product::<f64>();
    let c = x.coords();
    Ok(DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| {
            let r2 = scaled_sq_dist(c.column(i).iter(), xstar.iter(), &widened);
            scale * (-0.5 * r2).exp()
        }),
    ))
}

/// Per-dimension constants of the second-moment expectation.
pub(crate) struct SecondMomentCoeffs {
    /// `|2 V W^-1 + I|^-1/2`
    pub det_factor: f64,
    /// `2 v / (w (w + 2 v))` per dimension, half the diagonal of `Q^-1`, so
    /// the exponent is `sum_l curvature_l m_l^2`.
    pub curvature: Vec<f64>,
}

impl SecondMomentCoeffs {
    pub fn new(hyp: &Hyperparams) -> Self {
        let mut det_factor = 1.0;
        let mut curvature = Vec::with_capacity(hyp.latent_dim());
        for (&w, &v) in hyp.lengthscales_sq.iter().zip(&hyp.latent_var) {
            det_factor /= (1.0 + 2.0 * v / w).sqrt();
            curvature.push(2.0 * v / (w * (w + 2.0 * v)));
        }
        SecondMomentCoeffs { det_factor, curvature }
    }
}

/// Expected outer product `E[k k']` for `x ~ N(x*, V)`.
///
/// At `V = 0` the curvature terms vanish and the result is exactly `k* k*'`.
pub fn expected_kk(x: &LatentConfig, xstar: &[f64], hyp: &Hyperparams) -> Result<DMatrix<f64>> {
    let kstar = cross_cov(x, xstar, hyp)?;
    let n = x.len();
    if hyp.is_deterministic() {
        return Ok(&kstar * kstar.transpose());
    }
    let coeffs = SecondMomentCoeffs::new(hyp);
    let c = x.coords();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut quad = 0.0;
            for l in 0..hyp.latent_dim() {
                let m = 0.5 * (c[(l, i)] + c[(l, j)]) - xstar[l];
                quad += coeffs.curvature[l] * m * m;
            }
            let v = kstar[i] * kstar[j] * coeffs.det_factor * quad.exp();
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Cholesky factorization of a symmetric PSD matrix, with the jitter that was needed.
#[derive(Clone, Debug)]
pub struct PsdFactor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    jitter_used: f64,
}

const JITTER_START: f64 = 1e-10;
const JITTER_RETRIES: usize = 6;

impl PsdFactor {
    pub fn matrix_dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn lower_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        // exact symmetry keeps downstream symmetric products symmetric
        (&inv + inv.transpose()) * 0.5
    }
}

fn try_cholesky(m: &DMatrix<f64>, pivot_floor: f64) -> Option<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let ok = (0..m.nrows()).all(|i| {
        let p = l[(i, i)];
        p.is_finite() && p * p > pivot_floor
    });
    ok.then_some(chol)
}

/// Factorizes a symmetric matrix, escalating diagonal jitter on failure.
///
/// Jitter starts at `1e-10` times the mean diagonal and grows tenfold per
/// retry; after six retries the factorization is reported as failed.
pub fn factorize_psd(m: &DMatrix<f64>) -> Result<PsdFactor> {
    let n = m.nrows();
    if n != m.ncols() {
        return invalid("matrix to factorize must be square");
    }
    if n == 0 {
        return invalid("cannot factorize an empty matrix");
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return invalid("matrix to factorize is not symmetric");
            }
        }
    }
    let mean_diag = {
        let t = m.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        if t > 0.0 {
            t
        } else {
            1.0
        }
    };
    let pivot_floor = mean_diag * f64::EPSILON;

    let finish = |chol: Cholesky<f64, Dyn>, jitter_used: f64| {
        let l = chol.l_dirty();
        let log_det = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        PsdFactor { chol, log_det, jitter_used }
    };

    if let Some(chol) = try_cholesky(m, pivot_floor) {
        return Ok(finish(chol, 0.0));
    }
    let mut jitter = JITTER_START * mean_diag;
    for _ in 0..JITTER_RETRIES {
        let mut jittered = m.clone();
        for i in 0..n {
            jittered[(i, i)] += jitter;
        }
        if let Some(chol) = try_cholesky(&jittered, pivot_floor) {
            return Ok(finish(chol, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::FactorizationFailed { jitter: jitter / 10.0 })
}

/// Inverse of `K` with row and column `i` removed, computed from `K^-1`.
///
/// Uses `(K_{-i})^-1 = B - b b' / c` where `B` is `K^-1` without row/column
/// `i`, `b` its column `i` without entry `i`, and `c = K^-1[i][i]`.
pub fn downdate_inverse(k_inv: &DMatrix<f64>, i: usize) -> Result<DMatrix<f64>> {
    let n = k_inv.nrows();
    if n != k_inv.ncols() {
        return invalid("inverse must be square");
    }
    if i >= n {
        return invalid(format!("index {i} out of range for a {n}x{n} inverse"));
    }
    let c = k_inv[(i, i)];
    if !(c > 0.0) {
        return Err(Error::Numerical(format!(
            "diagonal entry {c:e} of the inverse is not positive; matrix was not PD"
        )));
    }
    let keep: Vec<usize> = (0..n).filter(|&r| r != i).collect();
    let mut out = DMatrix::zeros(n - 1, n - 1);
    for (a, &ra) in keep.iter().enumerate() {
        let ba = k_inv[(ra, i)];
        for (b, &rb) in keep.iter().enumerate() {
            out[(a, b)] = k_inv[(ra, rb)] - ba * k_inv[(i, rb)] / c;
        }
    }
    Ok(out)
}
