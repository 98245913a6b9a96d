//! Diagonal Gaussian kernel density estimate with leave-one-out widths.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_data, check_point};
use crate::error::{invalid, Result};
use crate::linalg::{log_sum_exp, LN_2PI};

pub const KDE_MAX_ITER: usize = 100;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KdeModel {
    centers: DMatrix<f64>,
    /// Diagonal of the kernel covariance.
    widths: Vec<f64>,
    /// Set when the widths collapsed towards zero during fitting.
    pub degenerate: bool,
}

struct LooEval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

/// `sum_j ln (1/(N-1)) sum_{i != j} N(z^j | z^i, diag(e^u))` with derivatives in `u`.
fn loo_eval(z: &DMatrix<f64>, u: &[f64], with_hessian: bool) -> LooEval {
    let (dd, n) = z.shape();
    let widths: Vec<f64> = u.iter().map(|v| v.exp()).collect();
    let base = -0.5 * (dd as f64 * LN_2PI + u.iter().sum::<f64>());
    let mut out = LooEval {
        value: 0.0,
        grad: DVector::zeros(dd),
        hess: DMatrix::zeros(dd, dd),
    };
    let mut q = DMatrix::zeros(dd, n);
    for j in 0..n {
        let mut logs = Vec::with_capacity(n - 1);
        for i in (0..n).filter(|&i| i != j) {
            let mut quad = 0.0;
            for l in 0..dd {
                let ql = (z[(l, j)] - z[(l, i)]).powi(2) / widths[l];
                q[(l, logs.len())] = ql;
                quad += ql;
            }
            logs.push(base - 0.5 * quad);
        }
        let lse = log_sum_exp(&logs);
        out.value += lse - ((n - 1) as f64).ln();
        // per-pair gradient is (q - 1)/2; Hessian of a pair is -diag(q)/2
        let mut mean_g = DVector::zeros(dd);
        let mut second = DMatrix::zeros(dd, dd);
        for (c, lv) in logs.iter().enumerate() {
            let p = (lv - lse).exp();
            let g = DVector::from_fn(dd, |l, _| 0.5 * (q[(l, c)] - 1.0));
            mean_g += &g * p;
            if with_hessian {
                second += (&g * g.transpose()) * p;
                for l in 0..dd {
                    second[(l, l)] -= 0.5 * p * q[(l, c)];
                }
            }
        }
        if with_hessian {
            out.hess += second - &mean_g * mean_g.transpose();
        }
        out.grad += mean_g;
    }
    out
}

/// Leave-one-out log density of a diagonal KDE with the given widths.
pub fn kde_loo_objective(z: &DMatrix<f64>, widths: &[f64]) -> Result<f64> {
    check_data(z, 2)?;
    if widths.len() != z.nrows() || widths.iter().any(|&w| !(w > 0.0)) {
        return invalid("widths must be positive, one per dimension");
    }
    let u: Vec<f64> = widths.iter().map(|w| w.ln()).collect();
    Ok(loo_eval(z, &u, false).value)
}

/// Safeguarded Newton ascent on the log-widths from a Silverman-style start.
pub fn fit_kde(z: &DMatrix<f64>) -> Result<KdeModel> {
    check_data(z, 2)?;
    let (dd, n) = z.shape();
    let mean = z.column_mean();
    let vars: Vec<f64> = (0..dd)
        .map(|l| {
            let v = z.row(l).iter().map(|x| (x - mean[l]).powi(2)).sum::<f64>() / n as f64;
            if v > 0.0 { v } else { 1.0 }
        })
        .collect();
    let shrink = (n as f64).powf(-2.0 / (dd as f64 + 4.0));
    let mut u: Vec<f64> = vars.iter().map(|v| (v * shrink).ln()).collect();
    let floor: Vec<f64> = vars.iter().map(|v| (1e-12 * v).ln()).collect();
    let mut degenerate = false;
    let mut cur = loo_eval(z, &u, true);

    for _ in 0..KDE_MAX_ITER {
        let gnorm = cur.grad.amax();
        if gnorm <= 1e-10 * (1.0 + cur.value.abs() / n as f64) {
            break;
        }
        let neg = -&cur.hess;
        let newton = neg.clone().cholesky().map(|c| c.solve(&cur.grad));
        let step = match newton {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            // not concave here; scaled gradient step of at most one unit per coordinate
            _ => &cur.grad / gnorm.max(1.0),
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let cand: Vec<f64> = u.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let next = loo_eval(z, &cand, true);
            if next.value.is_finite() && next.value > cur.value {
                u = cand;
                cur = next;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if u.iter().zip(&floor).any(|(a, f)| a < f) {
            degenerate = true;
            break;
        }
        if !moved {
            break;
        }
    }
    Ok(KdeModel {
        centers: z.clone(),
        widths: u.iter().map(|v| v.exp()).collect(),
        degenerate,
    })
}

impl KdeModel {
    pub fn new(centers: DMatrix<f64>, widths: Vec<f64>) -> Result<Self> {
        check_data(&centers, 1)?;
        if widths.len() != centers.nrows() || widths.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return invalid("widths must be positive, one per dimension");
        }
        Ok(KdeModel {
            centers,
            widths,
            degenerate: false,
        })
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    pub fn dim(&self) -> usize {
        self.centers.nrows()
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        let z = check_point(self.dim(), z)?;
        let base = -0.5 * (self.dim() as f64 * LN_2PI + self.widths.iter().map(|w| w.ln()).sum::<f64>());
        let logs: Vec<f64> = self
            .centers
            .column_iter()
            .map(|c| {
                let quad: f64 = (0..self.dim()).map(|l| (z[l] - c[l]).powi(2) / self.widths[l]).sum();
                base - 0.5 * quad
            })
            .collect();
        Ok(log_sum_exp(&logs) - (self.centers.ncols() as f64).ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_points_match_grid_search() {
        let z = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let m = fit_kde(&z).unwrap();
        // each point has the other as its only neighbour at distance 1
        let direct = |w: f64| 2.0 * (-0.5 * (2.0 * std::f64::consts::PI * w).ln() - 0.5 / w);
        let mut best = (0.0, f64::NEG_INFINITY);
        for k in 1..=3_000_000 {
            let w = k as f64 * 1e-6;
            let v = direct(w);
            if v > best.1 {
                best = (w, v);
            }
        }
        assert!((m.widths()[0] - best.0).abs() <= 1e-3 * best.0, "{} vs {}", m.widths()[0], best.0);
    }

    #[test]
    fn one_center_hand_value() {
        let m = KdeModel::new(DMatrix::from_row_slice(1, 1, &[0.0]), vec![1.0]).unwrap();
        let want = -0.5 * LN_2PI - 0.5;
        assert!((m.log_density(&[1.0]).unwrap() - want).abs() < 1e-15);
    }

    fn sample(seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(2, 25, |r, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            if r == 0 { v } else { 0.3 * v }
        })
    }

    #[test]
    fn scale_equivariance() {
        let z = sample(1);
        let c = 3.0;
        let a = fit_kde(&z).unwrap();
        let b = fit_kde(&(&z * c)).unwrap();
        for (wa, wb) in a.widths().iter().zip(b.widths()) {
            assert!((wb / wa - c * c).abs() < 1e-6 * c * c);
        }
        let va = kde_loo_objective(&z, a.widths()).unwrap();
        let vb = kde_loo_objective(&(&z * c), b.widths()).unwrap();
        assert!((vb - (va - 2.0 * c.ln() * 25.0)).abs() < 1e-6);
    }

    #[test]
    fn returned_widths_are_local_maximum() {
        let z = sample(2);
        let m = fit_kde(&z).unwrap();
        let at = kde_loo_objective(&z, m.widths()).unwrap();
        for l in 0..2 {
            for f in [1.01, 1.0 / 1.01] {
                let mut w = m.widths().to_vec();
                w[l] *= f;
                assert!(kde_loo_objective(&z, &w).unwrap() <= at);
            }
        }
        assert!(!m.degenerate);
    }

    #[test]
    fn identical_points_are_flagged() {
        let z = DMatrix::from_row_slice(1, 2, &[0.7, 0.7]);
        assert!(fit_kde(&z).unwrap().degenerate);
    }

    #[test]
    fn derivatives_match_differences() {
        let z = sample(3);
        let u = [-1.0, -2.5];
        let e = loo_eval(&z, &u, true);
        let h = 1e-5;
        for l in 0..2 {
            let mut p = u;
            let mut m = u;
            p[l] += h;
            m[l] -= h;
            let ep = loo_eval(&z, &p, true);
            let em = loo_eval(&z, &m, true);
            assert!(((ep.value - em.value) / (2.0 * h) - e.grad[l]).abs() < 1e-5);
            for k in 0..2 {
                assert!(((ep.grad[k] - em.grad[k]) / (2.0 * h) - e.hess[(k, l)]).abs() < 1e-5);
            }
        }
    }
}
