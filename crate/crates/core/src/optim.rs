//! Smooth unconstrained minimisation: L-BFGS and gradient descent, both with a
//! strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    Lbfgs,
    GradientDescent,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lbfgs" | "l-bfgs" => Ok(Self::Lbfgs),
            "gd" | "gradient-descent" => Ok(Self::GradientDescent),
            other => Err(domain(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub optimizer: Optimizer,
    pub max_iters: usize,
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Stop once the relative decrease stays below this...
    pub rel_tol: f64,
    /// ...for this many consecutive iterations.
    pub patience: usize,
    /// Stop when the gradient's max-norm drops below this.
    pub grad_tol: f64,
    pub max_line_evals: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Lbfgs,
            max_iters: 100,
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            rel_tol: 1e-8,
            patience: 3,
            grad_tol: 1e-10,
            max_line_evals: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIters,
    SmallDecrease,
    SmallGradient,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    /// Objective at the start point and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Probe {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dg: f64,
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    dg0: f64,
    c1: f64,
    c2: f64,
    evals: usize,
    max_evals: usize,
    best: Option<Probe>,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn probe(&mut self, alpha: f64) -> Result<Probe> {
        self.evals += 1;
        let xt: Vec<f64> = self.x.iter().zip(self.d).map(|(x, d)| x + alpha * d).collect();
        let (f, g) = (self.f)(&xt)?;
        let dg = dot(&g, self.d);
        let p = Probe { alpha, f, g, dg };
        if p.f.is_finite() && p.f <= self.f0 + self.c1 * alpha * self.dg0 {
            let better = self.best.as_ref().is_none_or(|b| p.f < b.f);
            if better {
                self.best = Some(Probe {
                    alpha,
                    f: p.f,
                    g: p.g.clone(),
                    dg: p.dg,
                });
            }
        }
        Ok(p)
    }

    fn armijo(&self, p: &Probe) -> bool {
        p.f.is_finite() && p.f <= self.f0 + self.c1 * p.alpha * self.dg0
    }

    fn curvature(&self, p: &Probe) -> bool {
        p.dg.abs() <= -self.c2 * self.dg0
    }

    /// Strong-Wolfe bracketing and zoom. Falls back to the best
    /// sufficient-decrease point seen if the budget runs out.
    fn run(mut self, alpha0: f64) -> Result<Option<Probe>> {
        let mut lo = Probe {
            alpha: 0.0,
            f: self.f0,
            g: vec![],
            dg: self.dg0,
        };
        let mut alpha = alpha0;
        let mut first = true;
        loop {
            if self.evals >= self.max_evals {
                return Ok(self.best);
            }
            let p = self.probe(alpha)?;
            if !p.f.is_finite() {
                // step left the domain; shrink toward the last good point
                alpha = lo.alpha + 0.1 * (alpha - lo.alpha);
                continue;
            }
            if !self.armijo(&p) || (!first && p.f >= lo.f) {
                return self.zoom(lo, p);
            }
            if self.curvature(&p) {
                return Ok(Some(p));
            }
            if p.dg >= 0.0 {
                return self.zoom(p, lo);
            }
            lo = p;
            alpha *= 2.0;
            first = false;
        }
    }

    fn zoom(mut self, mut lo: Probe, mut hi: Probe) -> Result<Option<Probe>> {
        loop {
            if self.evals >= self.max_evals {
                return Ok(self.best);
            }
            let alpha = interpolate(&lo, &hi);
            if (alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1.0) {
                return Ok(self.best);
            }
            let p = self.probe(alpha)?;
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Ok(Some(p));
                }
                if p.dg * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
    }
}

/// Minimiser of the cubic through two probes, kept inside the middle 80% of
/// the bracket; bisection when the cubic is unusable.
fn interpolate(a: &Probe, b: &Probe) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let mid = 0.5 * (lo + hi);
    if !a.f.is_finite() || !b.f.is_finite() {
        return mid;
    }
    let d1 = a.dg + b.dg - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dg * b.dg;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let den = b.dg - a.dg + 2.0 * d2;
    if den == 0.0 {
        return mid;
    }
    let t = b.alpha - (b.alpha - a.alpha) * (b.dg + d2 - d1) / den;
    let w = hi - lo;
    if !t.is_finite() || t < lo + 0.1 * w || t > hi - 0.1 * w {
        mid
    } else {
        t
    }
}

/// Minimises `f` from `x0`. `f` returns the value and gradient.
///
/// Every accepted step satisfies sufficient decrease, so the trace is
/// non-increasing.
pub fn minimize<F>(mut f: F, x0: &[f64], cfg: &OptimConfig) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if cfg.max_iters == 0 {
        return Err(domain("max_iters must be >= 1"));
    }
    if !(0.0 < cfg.c1 && cfg.c1 < cfg.c2 && cfg.c2 < 1.0) {
        return Err(domain("line search needs 0 < c1 < c2 < 1"));
    }
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("objective not finite at the start point (iteration 0)".into()));
    }
    let mut trace = vec![fx];
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut small = 0;
    let mut last_alpha = f64::NAN;
    let mut stop = StopReason::MaxIters;
    let mut iterations = 0;

    for it in 1..=cfg.max_iters {
        if max_abs(&g) <= cfg.grad_tol {
            stop = StopReason::SmallGradient;
            break;
        }
        let mut d = match cfg.optimizer {
            Optimizer::Lbfgs => two_loop(&g, &hist),
            Optimizer::GradientDescent => g.iter().map(|v| -v).collect(),
        };
        let mut dg0 = dot(&d, &g);
        if dg0 >= 0.0 {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            dg0 = dot(&d, &g);
        }
        let alpha0 = if hist.is_empty() {
            match cfg.optimizer {
                Optimizer::GradientDescent if last_alpha.is_finite() => 2.0 * last_alpha,
                _ => (1.0 / max_abs(&d)).min(1.0),
            }
        } else {
            1.0
        };
        let ls = LineSearch {
            f: &mut f,
            x: &x,
            d: &d,
            f0: fx,
            dg0,
            c1: cfg.c1,
            c2: cfg.c2,
            evals: 0,
            max_evals: cfg.max_line_evals,
            best: None,
        };
        let Some(step) = ls.run(alpha0)? else {
            if !hist.is_empty() {
                // retry once along steepest descent with fresh memory
                hist.clear();
                continue;
            }
            stop = StopReason::LineSearchFailed;
            break;
        };
        if step.g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at iteration {it}")));
        }
        let s: Vec<f64> = d.iter().map(|v| step.alpha * v).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let prev = fx;
        fx = step.f;
        g = step.g;
        last_alpha = step.alpha;
        trace.push(fx);
        iterations = it;
        if cfg.optimizer == Optimizer::Lbfgs && sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            hist.push_back((s, y, 1.0 / sy));
            if hist.len() > cfg.memory {
                hist.pop_front();
            }
        }
        let rel = (prev - fx) / prev.abs().max(1e-12);
        if rel < cfg.rel_tol {
            small += 1;
            if small >= cfg.patience {
                stop = StopReason::SmallDecrease;
                break;
            }
        } else {
            small = 0;
        }
    }
    Ok(OptimResult {
        x,
        value: fx,
        grad: g,
        trace,
        iterations,
        stop,
    })
}

fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let scale = dot(s, y) / dot(y, y);
        for v in &mut q {
            *v *= scale;
        }
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}
