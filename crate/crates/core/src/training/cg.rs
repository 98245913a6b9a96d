//! Polak–Ribière nonlinear conjugate gradients with a strong Wolfe line search.

use std::time::Instant;

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CgOptions {
    pub max_steps: usize,
    /// Stop once `f_prev - f_new <= rel_tol * max(|f_prev|, |f_new|)`.
    pub rel_tol: f64,
    /// Stop once the Euclidean gradient norm falls to this value.
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_evals: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            max_steps: 600,
            rel_tol: 1e-9,
            grad_tol: 0.0,
            c1: 1e-4,
            c2: 0.1,
            max_line_evals: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CgStop {
    StepBudget,
    RelativeDecrease,
    Stationary,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub grad: Vec<f64>,
    /// Objective after each accepted step.
    pub values: Vec<f64>,
    pub step_seconds: Vec<f64>,
    pub evaluations: usize,
    pub stop: CgStop,
}

impl CgOutcome {
    pub fn steps(&self) -> usize {
        self.values.len()
    }

    pub fn line_search_failed(&self) -> bool {
        self.stop == CgStop::LineSearchFailed
    }
}

#[derive(Clone, Debug)]
struct Probe {
    alpha: f64,
    f: f64,
    /// Directional derivative; NaN when the probe was not finite.
    d: f64,
    g: Vec<f64>,
}

impl Probe {
    fn failed(alpha: f64) -> Self {
        Probe {
            alpha,
            f: f64::INFINITY,
            d: f64::NAN,
            g: Vec::new(),
        }
    }

    fn is_finite(&self) -> bool {
        self.f.is_finite()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizer of the cubic matching values and slopes at `a` and `b`.
fn cubic_min(a: &Probe, b: &Probe) -> Option<f64> {
    let d1 = a.d + b.d - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.d * b.d;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let denom = b.d - a.d + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let t = b.alpha - (b.alpha - a.alpha) * (b.d + d2 - d1) / denom;
    t.is_finite().then_some(t)
}

struct LineSearch<'a, F> {
    objective: &'a mut F,
    x: &'a [f64],
    p: &'a [f64],
    f0: f64,
    d0: f64,
    c1: f64,
    c2: f64,
    evals_left: usize,
    evaluations: usize,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, alpha: f64) -> Option<Probe> {
        if self.evals_left == 0 {
            return None;
        }
        self.evals_left -= 1;
        self.evaluations += 1;
        let xt: Vec<f64> = self.x.iter().zip(self.p).map(|(x, p)| x + alpha * p).collect();
        Some(match (self.objective)(&xt) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => Probe {
                alpha,
                f,
                d: dot(&g, self.p),
                g,
            },
            _ => Probe::failed(alpha),
        })
    }

    fn armijo(&self, p: &Probe) -> bool {
        p.is_finite() && p.f <= self.f0 + self.c1 * p.alpha * self.d0
    }

    fn curvature(&self, p: &Probe) -> bool {
        p.d.abs() <= -self.c2 * self.d0
    }

    /// Returns the accepted probe and whether it satisfies the strong Wolfe conditions.
    fn run(&mut self, alpha_init: f64) -> Option<(Probe, bool)> {
        let origin = Probe {
            alpha: 0.0,
            f: self.f0,
            d: self.d0,
            g: Vec::new(),
        };
        let mut prev = origin;
        let mut alpha = alpha_init;
        let mut first = true;
        loop {
            let cur = self.eval(alpha)?;
            if !cur.is_finite() {
                // stepped outside the domain; pull back towards the last good point
                alpha = prev.alpha + 0.1 * (alpha - prev.alpha);
                if alpha - prev.alpha <= f64::EPSILON * alpha.abs().max(1e-300) {
                    return None;
                }
                continue;
            }
            if !self.armijo(&cur) || (!first && cur.f >= prev.f) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Some(if first { self.refine(cur) } else { (cur, true) });
            }
            if cur.d >= 0.0 {
                return self.zoom(cur, prev);
            }
            let lo = cur.alpha * 1.1;
            let hi = cur.alpha * 10.0;
            alpha = cubic_min(&prev, &cur).map_or(2.0 * cur.alpha, |t| t.clamp(lo, hi));
            prev = cur;
            first = false;
        }
    }

    /// One secant step after a first-trial acceptance; exact on quadratics.
    fn refine(&mut self, cur: Probe) -> (Probe, bool) {
        let denom = self.d0 - cur.d;
        let t = cur.alpha * self.d0 / denom;
        if !(t.is_finite() && t > 0.0) || (t - cur.alpha).abs() <= 1e-3 * cur.alpha {
            return (cur, true);
        }
        match self.eval(t) {
            Some(alt) if self.armijo(&alt) && self.curvature(&alt) && alt.f <= cur.f => (alt, true),
            _ => (cur, true),
        }
    }

    /// `lo` satisfies Armijo with the lowest value seen; the minimizer lies between `lo` and `hi`.
    fn zoom(&mut self, mut lo: Probe, mut hi: Probe) -> Option<(Probe, bool)> {
        loop {
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = b - a;
            if width <= f64::EPSILON * b.abs().max(1e-300) {
                break;
            }
            let guess = if hi.is_finite() { cubic_min(&lo, &hi) } else { None };
            let alpha = guess
                .filter(|t| *t > a + 0.1 * width && *t < b - 0.1 * width)
                .unwrap_or(0.5 * (a + b));
            let Some(cur) = self.eval(alpha) else { break };
            if !self.armijo(&cur) || cur.f >= lo.f {
                hi = cur;
                continue;
            }
            if self.curvature(&cur) {
                return Some((cur, true));
            }
            if cur.d * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
        // no Wolfe point found; a strict decrease is still usable
        (lo.alpha > 0.0).then_some((lo, false))
    }
}

/// Minimizes `objective`, which maps a parameter vector to its value and gradient.
///
/// Failed or non-finite evaluations during a line search count as `+inf`.
pub fn cg_minimize<F>(mut objective: F, x0: &[f64], opts: &CgOptions) -> Result<CgOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (mut f, mut g) = objective(x0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return invalid("objective is not finite at the starting point");
    }
    if g.len() != x0.len() {
        return invalid("gradient length does not match the parameter vector");
    }
    let n = x0.len().max(1);
    let mut x = x0.to_vec();
    let mut p: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut out = CgOutcome {
        x: Vec::new(),
        value: f,
        initial_value: f,
        grad: Vec::new(),
        values: Vec::new(),
        step_seconds: Vec::new(),
        evaluations: 1,
        stop: CgStop::StepBudget,
    };
    let mut last: Option<(f64, f64)> = None;
    let mut since_restart = 0;

    for _ in 0..opts.max_steps {
        let gnorm = norm(&g);
        if gnorm <= opts.grad_tol || gnorm == 0.0 {
            out.stop = CgStop::Stationary;
            break;
        }
        let started = Instant::now();
        let mut d0 = dot(&g, &p);
        if !(d0 < 0.0) {
            p = g.iter().map(|v| -v).collect();
            d0 = -gnorm * gnorm;
            since_restart = 0;
        }
        let alpha_init = match last {
            Some((alpha, d_prev)) => (alpha * d_prev / d0).min(1e10),
            None => 1.0 / norm(&p),
        };
        let mut search = LineSearch {
            objective: &mut objective,
            x: &x,
            p: &p,
            f0: f,
            d0,
            c1: opts.c1,
            c2: opts.c2,
            evals_left: opts.max_line_evals,
            evaluations: 0,
        };
        let accepted = search.run(alpha_init);
        out.evaluations += search.evaluations;
        let Some((probe, wolfe)) = accepted else {
            out.stop = CgStop::LineSearchFailed;
            break;
        };

        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += probe.alpha * pi;
        }
        let f_new = probe.f;
        let g_new = probe.g;
        since_restart += 1;
        let beta = if wolfe && since_restart < n {
            let gg = dot(&g, &g);
            let num: f64 = g_new.iter().zip(&g).map(|(a, b)| a * (a - b)).sum();
            (num / gg).max(0.0)
        } else {
            since_restart = 0;
            0.0
        };
        for (pi, gi) in p.iter_mut().zip(&g_new) {
            *pi = -gi + beta * *pi;
        }
        last = Some((probe.alpha, d0));
        let decrease = f - f_new;
        let scale = f.abs().max(f_new.abs());
        f = f_new;
        g = g_new;
        out.values.push(f);
        out.step_seconds.push(started.elapsed().as_secs_f64());
        if decrease <= opts.rel_tol * scale {
            out.stop = CgStop::RelativeDecrease;
            break;
        }
    }
    out.x = x;
    out.value = f;
    out.grad = g;
    Ok(out)
}
