//! Training objectives with analytic gradients.
//!
//! Gradients are obtained by reverse accumulation through the matrix-level
//! computation: the per-pair log densities feed adjoints back into the LOO means,
//! the projected covariances, `K^-1`, the expected kernel vectors and matrices,
//! and finally the latent coordinates and log-domain hyperparameters.
//!
//! The leave-one-out means never refactorize: removing pair `i` from the GP
//! changes the mean at any query with kernel vector `k` to
//! `mu(k) - a_i (K^-1 k)_i / K^-1[i][i]`, where `a_i` is column `i` of `Z K^-1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::ModelState;
use crate::error::{invalid, Result};
use crate::gp::COV_EIG_FLOOR;
use crate::kernel::{factorize_psd, kernel_matrix, scaled_sq_dist, HyperLayout, SecondMomentCoeffs};
use crate::linalg::{log_sum_exp, LN_2PI};

/// Loss value (to be minimized) and its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    /// `d x N`, same layout as the latent coordinates.
    pub grad_latents: DMatrix<f64>,
    /// Log-domain hyperparameter gradient in [`HyperLayout`] order.
    pub grad_hyp: Vec<f64>,
    /// Diagonal jitter the kernel factorization needed (0 when none).
    pub jitter: f64,
}

/// `dL/dK = 1/2 K^-1 (Z'Z - D K) K^-1` for the GP log marginal likelihood `L`.
pub fn marginal_likelihood_dk(k: &DMatrix<f64>, k_inv: &DMatrix<f64>, gram: &DMatrix<f64>, data_dim: usize) -> DMatrix<f64> {
    (k_inv * (gram - k * data_dim as f64) * k_inv) * 0.5
}

/// Negative GP log marginal likelihood of the data, summed over the D outputs.
pub fn objective_lz(model: &ModelState) -> Result<ObjectiveValue> {
    model.validate()?;
    let n = model.len();
    let dd = model.data_dim();
    let k = kernel_matrix(&model.latents, &model.hyp)?;
    let factor = factorize_psd(&k)?;
    let kinv = factor.inverse();
    let z = &model.targets;
    let gram = z.transpose() * z;
    let value = 0.5 * (dd * n) as f64 * LN_2PI
        + 0.5 * dd as f64 * factor.log_det()
        + 0.5 * kinv.component_mul(&gram).sum();

    // the loss is the negated likelihood
    let k_bar = (&kinv * dd as f64 - &kinv * &gram * &kinv) * 0.5;

    let mut grads = Grads::new(model);
    grads.backprop_kernel_matrix(model, &k_bar);
    Ok(grads.finish(value, factor.jitter_used()))
}

/// Leave-one-out objective: every data point is scored by the remaining N-1
/// components, whose means come from the GP with that point's pair removed.
pub fn objective_loo(model: &ModelState) -> Result<ObjectiveValue> {
    model.validate()?;
    let n = model.len();
    if n < 2 {
        return invalid("the leave-one-out objective needs at least two points");
    }
    let fwd = Forward::new(model)?;
    let terms: Vec<Term> = (0..n)
        .map(|i| Term {
            point: i,
            components: (0..n).filter(|&j| j != i).collect(),
        })
        .collect();
    Ok(fwd.evaluate(model, &terms))
}

/// Picks, for every data point `k`, the `N - P` components that explain `z^k`
/// worst (lowest leave-one-out density). Ties keep the smaller index.
pub fn select_lpo_subsets(model: &ModelState, leave_out: usize) -> Result<Vec<Vec<usize>>> {
    model.validate()?;
    check_leave_out(model.len(), leave_out)?;
    let fwd = Forward::new(model)?;
    Ok(fwd.select_subsets(&model.targets, leave_out))
}

/// Leave-P-out objective with subsets selected at the current parameters.
pub fn objective_lpo(model: &ModelState, leave_out: usize) -> Result<ObjectiveValue> {
    model.validate()?;
    check_leave_out(model.len(), leave_out)?;
    let fwd = Forward::new(model)?;
    let subsets = fwd.select_subsets(&model.targets, leave_out);
    Ok(fwd.evaluate(model, &lpo_terms(model.len(), &subsets)))
}

/// Leave-P-out objective for a fixed collection of retained-component subsets.
///
/// Subset `k` scores every point `i` outside it against the components inside
/// it. No gradient flows through the choice of subsets.
pub fn objective_lpo_with_subsets(model: &ModelState, subsets: &[Vec<usize>]) -> Result<ObjectiveValue> {
    model.validate()?;
    let n = model.len();
    for s in subsets {
        if s.is_empty() || s.len() >= n || s.iter().any(|&j| j >= n) {
            return invalid("each subset must be a non-empty proper subset of the components");
        }
    }
    let fwd = Forward::new(model)?;
    Ok(fwd.evaluate(model, &lpo_terms(n, subsets)))
}

fn check_leave_out(n: usize, leave_out: usize) -> Result<()> {
    if leave_out == 0 || leave_out + 1 > n {
        return invalid(format!(
            "leave-out count {leave_out} must lie in 1..={}",
            n.saturating_sub(1)
        ));
    }
    Ok(())
}

fn lpo_terms(n: usize, subsets: &[Vec<usize>]) -> Vec<Term> {
    let mut terms = Vec::new();
    for subset in subsets {
        let mut inside = vec![false; n];
        for &j in subset {
            inside[j] = true;
        }
        for i in (0..n).filter(|&i| !inside[i]) {
            terms.push(Term {
                point: i,
                components: subset.clone(),
            });
        }
    }
    terms
}

/// Contributes `-ln (1/|S|) sum_{j in S} N(z^i | mu_j^{-i}, Sigma_j)`.
struct Term {
    point: usize,
    components: Vec<usize>,
}

enum CompCov {
    /// Variances `s_j` of spherical components.
    Spherical(Vec<f64>),
    /// Inverse and log-determinant of each full component covariance.
    Full(Vec<(DMatrix<f64>, f64)>),
}

/// Forward quantities shared by value, subset selection and gradient.
struct Forward {
    n: usize,
    dd: usize,
    jitter: f64,
    kinv: DMatrix<f64>,
    /// `Z K^-1`, D x N; column i is `a_i`.
    m: DMatrix<f64>,
    /// Column j is the (expected) kernel vector of component j.
    kt: DMatrix<f64>,
    /// `K^-1 kt`
    g: DMatrix<f64>,
    /// Full-GP component means `m kt`.
    mu: DMatrix<f64>,
    cov: CompCov,
}

impl Forward {
    fn new(model: &ModelState) -> Result<Self> {
        let hyp = &model.hyp;
        let n = model.len();
        let dd = model.data_dim();
        let k = kernel_matrix(&model.latents, hyp)?;
        let factor = factorize_psd(&k)?;
        let kinv = factor.inverse();
        let m = &model.targets * &kinv;
        let kt = expected_kernel_columns(model);
        let kss = hyp.k_star_star();
        // Dirac components sit on training latents, so k_j = K e_j - nu e_j and
        // the products with K^-1 simplify; the direct forms cancel badly at low noise.
        let nu = hyp.noise_var + factor.jitter_used();
        let (g, mu) = if hyp.is_deterministic() {
            (DMatrix::identity(n, n) - &kinv * nu, &model.targets - &m * nu)
        } else {
            (&kinv * &kt, &m * &kt)
        };

        let cov = if hyp.is_deterministic() {
            CompCov::Spherical((0..n).map(|j| hyp.noise_var + nu * (1.0 - nu * kinv[(j, j)]).max(0.0)).collect())
        } else {
            let coeffs = SecondMomentCoeffs::new(hyp);
            CompCov::Full(
                (0..n)
                    .map(|j| {
                        let khat = expected_outer(model, &coeffs, j);
                        let iso = kss - kinv.component_mul(&khat).sum();
                        let ktj = kt.column(j);
                        let spread = khat - ktj * ktj.transpose();
                        let mut sigma = &m * spread * m.transpose();
                        for r in 0..dd {
                            sigma[(r, r)] += iso;
                        }
                        let sigma = (&sigma + sigma.transpose()) * 0.5;
                        inverse_and_log_det(sigma)
                    })
                    .collect(),
            )
        };

        Ok(Forward {
            n,
            dd,
            jitter: factor.jitter_used(),
            kinv,
            m,
            kt,
            g,
            mu,
            cov,
        })
    }

    /// Mean of component j with pair i removed from the GP.
    fn loo_mean(&self, i: usize, j: usize) -> DVector<f64> {
        let coef = self.g[(i, j)] / self.kinv[(i, i)];
        self.mu.column(j) - self.m.column(i) * coef
    }

    fn log_density(&self, z: &DMatrix<f64>, i: usize, j: usize) -> f64 {
        let r = z.column(i) - self.loo_mean(i, j);
        match &self.cov {
            CompCov::Spherical(s) => {
                let s = s[j];
                -0.5 * self.dd as f64 * (LN_2PI + s.ln()) - 0.5 * r.norm_squared() / s
            }
            CompCov::Full(c) => {
                let (inv, log_det) = &c[j];
                -0.5 * (self.dd as f64 * LN_2PI + log_det) - 0.5 * r.dot(&(inv * &r))
            }
        }
    }

    fn select_subsets(&self, z: &DMatrix<f64>, leave_out: usize) -> Vec<Vec<usize>> {
        let keep = self.n - leave_out;
        (0..self.n)
            .map(|k| {
                let mut scored: Vec<(f64, usize)> =
                    (0..self.n).map(|j| (self.log_density(z, k, j), j)).collect();
                scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut subset: Vec<usize> = scored[..keep].iter().map(|&(_, j)| j).collect();
                subset.sort_unstable();
                subset
            })
            .collect()
    }

    /// Objective value plus gradient for a list of leave-out terms.
    fn evaluate(&self, model: &ModelState, terms: &[Term]) -> ObjectiveValue {
        let n = self.n;
        let z = &model.targets;
        // dLoss / d(log density of pair (i, j))
        let mut w_bar = DMatrix::<f64>::zeros(n, n);
        let mut value = 0.0;
        let mut cache: Vec<Option<f64>> = vec![None; n * n];
        for term in terms {
            let i = term.point;
            let logs: Vec<f64> = term
                .components
                .iter()
                .map(|&j| *cache[i * n + j].get_or_insert_with(|| self.log_density(z, i, j)))
                .collect();
            let lse = log_sum_exp(&logs);
            value -= lse - (logs.len() as f64).ln();
            for (&j, l) in term.components.iter().zip(&logs) {
                w_bar[(i, j)] -= (l - lse).exp();
            }
        }
        let mut grads = Grads::new(model);
        self.backward(model, &w_bar, &mut grads);
        grads.finish(value, self.jitter)
    }

    fn backward(&self, model: &ModelState, w_bar: &DMatrix<f64>, grads: &mut Grads) {
        let n = self.n;
        let dd = self.dd;
        let z = &model.targets;

        let mut mu_bar = DMatrix::<f64>::zeros(dd, n);
        let mut m_bar = DMatrix::<f64>::zeros(dd, n);
        let mut g_bar = DMatrix::<f64>::zeros(n, n);
        let mut c_bar = vec![0.0; n];
        let mut s_bar = vec![0.0; n];
        let mut sigma_bar: Vec<DMatrix<f64>> = match &self.cov {
            CompCov::Spherical(_) => Vec::new(),
            CompCov::Full(_) => vec![DMatrix::zeros(dd, dd); n],
        };

        for i in 0..n {
            let c = self.kinv[(i, i)];
            for j in 0..n {
                let w = w_bar[(i, j)];
                if w == 0.0 {
                    continue;
                }
                let r = z.column(i) - self.loo_mean(i, j);
                // u = Sigma_j^-1 r is the gradient of the log density w.r.t. the mean
                let u = match &self.cov {
                    CompCov::Spherical(s) => {
                        let s = s[j];
                        s_bar[j] += w * 0.5 * (r.norm_squared() / (s * s) - dd as f64 / s);
                        r / s
                    }
                    CompCov::Full(cov) => {
                        let inv = &cov[j].0;
                        let u = inv * r;
                        sigma_bar[j] += (&u * u.transpose() - inv) * (0.5 * w);
                        u
                    }
                };
                let mean_bar = u * w;
                mu_bar.column_mut(j).axpy(1.0, &mean_bar, 1.0);
                let gij = self.g[(i, j)];
                let dot = self.m.column(i).dot(&mean_bar);
                m_bar.column_mut(i).axpy(-gij / c, &mean_bar, 1.0);
                g_bar[(i, j)] -= dot / c;
                c_bar[i] += dot * gij / (c * c);
            }
        }

        if let CompCov::Spherical(_) = &self.cov {
            self.backward_dirac(model, mu_bar, m_bar, &g_bar, &c_bar, &s_bar, grads);
            return;
        }

        m_bar += &mu_bar * self.kt.transpose();
        let mut kt_bar = self.m.transpose() * &mu_bar;
        let mut kinv_bar = &g_bar * self.kt.transpose();
        kt_bar += &self.kinv * &g_bar;
        for i in 0..n {
            kinv_bar[(i, i)] += c_bar[i];
        }

        let mut kss_bar = 0.0;
        let coeffs = SecondMomentCoeffs::new(&model.hyp);
        for (j, sb) in sigma_bar.iter().enumerate() {
            if sb.iter().all(|&v| v == 0.0) {
                continue;
            }
            let t = sb.trace();
            kss_bar += t;
            let khat = expected_outer(model, &coeffs, j);
            kinv_bar -= &khat * t;
            let b = self.m.transpose() * sb * &self.m;
            let ktj = self.kt.column(j).clone_owned();
            kt_bar.column_mut(j).axpy(-2.0, &(&b * &ktj), 1.0);
            let spread = &khat - &ktj * ktj.transpose();
            m_bar += (sb * &self.m * spread) * 2.0;
            let khat_bar = b - &self.kinv * t;
            grads.backprop_expected_outer(model, &coeffs, &khat, &khat_bar, j);
        }

        kinv_bar += z.transpose() * &m_bar;
        let k_bar = -(&self.kinv * kinv_bar * &self.kinv);

        grads.backprop_kss(model, kss_bar);
        grads.backprop_kernel_matrix(model, &k_bar);
        grads.backprop_expected_columns(model, &self.kt, &kt_bar);
    }

    /// Adjoint for Dirac components through the forms used in the forward pass:
    /// `mu = Z - nu M`, `g = I - nu K^-1`, `s_j = sn2 + nu - nu^2 K^-1_jj`.
    #[allow(clippy::too_many_arguments)]
    fn backward_dirac(
        &self,
        model: &ModelState,
        mu_bar: DMatrix<f64>,
        mut m_bar: DMatrix<f64>,
        g_bar: &DMatrix<f64>,
        c_bar: &[f64],
        s_bar: &[f64],
        grads: &mut Grads,
    ) {
        let nu = model.hyp.noise_var + self.jitter;
        let mut nu_bar = -mu_bar.dot(&self.m) - g_bar.dot(&self.kinv);
        m_bar -= &mu_bar * nu;
        let mut kinv_bar = g_bar * -nu;
        let mut noise_bar = 0.0;
        for j in 0..self.n {
            kinv_bar[(j, j)] += c_bar[j];
            let sb = s_bar[j];
            noise_bar += sb;
            if 1.0 - nu * self.kinv[(j, j)] <= 0.0 {
                continue;
            }
            nu_bar += sb * (1.0 - 2.0 * nu * self.kinv[(j, j)]);
            kinv_bar[(j, j)] -= sb * nu * nu;
        }
        kinv_bar += model.targets.transpose() * &m_bar;
        let k_bar = -(&self.kinv * kinv_bar * &self.kinv);
        grads.backprop_kernel_matrix(model, &k_bar);
        let noise = grads.layout.noise();
        grads.hyp[noise] += (noise_bar + nu_bar) * model.hyp.noise_var;
    }
}

/// Eigen-based inverse and log-determinant after flooring the spectrum.
fn inverse_and_log_det(sigma: DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let eig = SymmetricEigen::new(sigma);
    let vals = eig.eigenvalues.map(|l| l.max(COV_EIG_FLOOR));
    let log_det = vals.iter().map(|l| l.ln()).sum();
    let v = &eig.eigenvectors;
    let inv = v * DMatrix::from_diagonal(&vals.map(|l| 1.0 / l)) * v.transpose();
    ((&inv + inv.transpose()) * 0.5, log_det)
}

/// `kt[(a, j)] = E[k(x^a, x)]` for `x ~ N(x^j, V)`; the noise-free kernel when `V = 0`.
fn expected_kernel_columns(model: &ModelState) -> DMatrix<f64> {
    let hyp = &model.hyp;
    let x = model.latents.coords();
    let n = model.len();
    let widened: Vec<f64> = hyp
        .lengthscales_sq
        .iter()
        .zip(&hyp.latent_var)
        .map(|(w, v)| w + v)
        .collect();
    let scale = hyp.signal_var
        * hyp
            .lengthscales_sq
            .iter()
            .zip(&widened)
            .map(|(w, wv)| (w / wv).sqrt())
            .product::<f64>();
    DMatrix::from_fn(n, n, |a, j| {
        scale * (-0.5 * scaled_sq_dist(x.column(a).iter(), x.column(j).iter(), &widened)).exp()
    })
}

/// `E[k k']` for the input distribution centred on latent point j.
fn expected_outer(model: &ModelState, coeffs: &SecondMomentCoeffs, j: usize) -> DMatrix<f64> {
    let hyp = &model.hyp;
    let x = model.latents.coords();
    let n = model.len();
    let d = hyp.latent_dim();
    let kstar: Vec<f64> = (0..n)
        .map(|a| {
            hyp.signal_var
                * (-0.5 * scaled_sq_dist(x.column(a).iter(), x.column(j).iter(), &hyp.lengthscales_sq)).exp()
        })
        .collect();
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let mut quad = 0.0;
            for l in 0..d {
                let m = 0.5 * (x[(l, a)] + x[(l, b)]) - x[(l, j)];
                quad += coeffs.curvature[l] * m * m;
            }
            let v = kstar[a] * kstar[b] * coeffs.det_factor * quad.exp();
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// Gradient accumulator over latent coordinates and log hyperparameters.
struct Grads {
    layout: HyperLayout,
    latents: DMatrix<f64>,
    hyp: Vec<f64>,
}

impl Grads {
    fn new(model: &ModelState) -> Self {
        let layout = HyperLayout::for_hyp(&model.hyp);
        Grads {
            layout,
            latents: DMatrix::zeros(model.latents.dim(), model.len()),
            hyp: vec![0.0; layout.len()],
        }
    }

    fn finish(self, value: f64, jitter: f64) -> ObjectiveValue {
        ObjectiveValue {
            value,
            grad_latents: self.latents,
            grad_hyp: self.hyp,
            jitter,
        }
    }

    fn backprop_kss(&mut self, model: &ModelState, kss_bar: f64) {
        self.hyp[self.layout.signal()] += kss_bar * model.hyp.signal_var;
        self.hyp[self.layout.noise()] += kss_bar * model.hyp.noise_var;
    }

    /// `K[a][b] = sf2 exp(-r2/2) + [a == b] sn2`; every ordered pair is visited.
    fn backprop_kernel_matrix(&mut self, model: &ModelState, k_bar: &DMatrix<f64>) {
        let hyp = &model.hyp;
        let x = model.latents.coords();
        let n = model.len();
        let d = hyp.latent_dim();
        let ls = &hyp.lengthscales_sq;
        for a in 0..n {
            let kb = k_bar[(a, a)];
            self.hyp[self.layout.signal()] += kb * hyp.signal_var;
            self.hyp[self.layout.noise()] += kb * hyp.noise_var;
            for b in 0..n {
                if a == b {
                    continue;
                }
                let kb = k_bar[(a, b)];
                if kb == 0.0 {
                    continue;
                }
                let val = hyp.signal_var
                    * (-0.5 * scaled_sq_dist(x.column(a).iter(), x.column(b).iter(), ls)).exp();
                let f = kb * val;
                self.hyp[self.layout.signal()] += f;
                for l in 0..d {
                    let delta = x[(l, a)] - x[(l, b)];
                    self.latents[(l, a)] -= f * delta / ls[l];
                    self.latents[(l, b)] += f * delta / ls[l];
                    self.hyp[self.layout.lengthscale(l)] += f * 0.5 * delta * delta / ls[l];
                }
            }
        }
    }

    /// `kt[a][j] = sf2 prod_l (w_l/(w_l+v_l))^1/2 exp(-1/2 sum_l (x_al - x_jl)^2/(w_l+v_l))`.
    fn backprop_expected_columns(&mut self, model: &ModelState, kt: &DMatrix<f64>, kt_bar: &DMatrix<f64>) {
        let hyp = &model.hyp;
        let x = model.latents.coords();
        let n = model.len();
        let d = hyp.latent_dim();
        for j in 0..n {
            for a in 0..n {
                let f = kt_bar[(a, j)] * kt[(a, j)];
                if f == 0.0 {
                    continue;
                }
                self.hyp[self.layout.signal()] += f;
                for l in 0..d {
                    let w = hyp.lengthscales_sq[l];
                    let v = hyp.latent_var[l];
                    let wv = w + v;
                    let delta = x[(l, a)] - x[(l, j)];
                    self.latents[(l, a)] -= f * delta / wv;
                    self.latents[(l, j)] += f * delta / wv;
                    self.hyp[self.layout.lengthscale(l)] +=
                        f * (0.5 - 0.5 * w / wv + 0.5 * w * delta * delta / (wv * wv));
                    if let Some(idx) = self.layout.latent_var(l) {
                        self.hyp[idx] += f * v * (-0.5 / wv + 0.5 * delta * delta / (wv * wv));
                    }
                }
            }
        }
    }

    /// Adjoint of `Khat_j[a][b] = k(x^a, x^j) k(x^b, x^j) c0 exp(sum_l q_l m_l^2)`
    /// with `m = (x^a + x^b)/2 - x^j`.
    fn backprop_expected_outer(
        &mut self,
        model: &ModelState,
        coeffs: &SecondMomentCoeffs,
        khat: &DMatrix<f64>,
        khat_bar: &DMatrix<f64>,
        j: usize,
    ) {
        let hyp = &model.hyp;
        let x = model.latents.coords();
        let n = model.len();
        let d = hyp.latent_dim();
        for a in 0..n {
            for b in 0..n {
                let f = khat_bar[(a, b)] * khat[(a, b)];
                if f == 0.0 {
                    continue;
                }
                self.hyp[self.layout.signal()] += 2.0 * f;
                for l in 0..d {
                    let w = hyp.lengthscales_sq[l];
                    let v = hyp.latent_var[l];
                    let q = coeffs.curvature[l];
                    let da = x[(l, a)] - x[(l, j)];
                    let db = x[(l, b)] - x[(l, j)];
                    let m = 0.5 * (da + db);
                    self.latents[(l, a)] += f * (-da / w + q * m);
                    self.latents[(l, b)] += f * (-db / w + q * m);
                    self.latents[(l, j)] += f * ((da + db) / w - 2.0 * q * m);
                    let w2v = w + 2.0 * v;
                    self.hyp[self.layout.lengthscale(l)] += f
                        * (0.5 * (da * da + db * db) / w + v / w2v
                            - 4.0 * v * (w + v) * m * m / (w * w2v * w2v));
                    if let Some(idx) = self.layout.latent_var(l) {
                        self.hyp[idx] += f * (-v / w2v + 2.0 * v * m * m / (w2v * w2v));
                    }
                }
            }
        }
    }
}
