//! Stable scalar kernels shared by every module: the two soft-minimum
//! flavours, the soft selector, and a central-difference gradient checker.
//!
//! Two soft minima appear in this crate and they are not interchangeable:
//!
//! * [`softmin_lse`] is `-γ log Σ exp(-αᵢ/γ)`. It lower-bounds `min α`, is what
//!   the soft-DTW recursion computes, and is the smooth surrogate used for
//!   training gradients.
//! * [`softmin_exp`] is the Gibbs expectation `Σ αᵢ wᵢ` with
//!   `wᵢ ∝ exp(-αᵢ/γ)`. It lies inside `[min α, max α]` and is the value the
//!   uncertainty-aware distance reports.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Smoothing temperature `γ ≥ 0`.
///
/// `γ = 0` selects the exact hard minimum; `γ = +∞` is accepted by the
/// expectation kernels (uniform weights).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Gamma(f64);

impl Gamma {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 {
            return Err(domain(format!("gamma must be >= 0, got {value}")));
        }
        Ok(Self(value))
    }

    /// Panics on invalid input; for literals in tests and examples.
    pub fn of(value: f64) -> Self {
        Self::new(value).expect("valid gamma")
    }

    pub const HARD: Gamma = Gamma(0.0);

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn is_hard(self) -> bool {
        self.0 == 0.0
    }
}

fn argmin_first(alpha: &[f64]) -> usize {
    let mut best = 0;
    for (i, &a) in alpha.iter().enumerate().skip(1) {
        if a < alpha[best] {
            best = i;
        }
    }
    best
}

/// Gibbs weights `wᵢ ∝ exp(-αᵢ/γ)`, normalised to sum to one.
///
/// The exponent is shifted before exponentiation. The shift cancels in the
/// normalisation, so the weights equal the mean-subtracted form exactly; the
/// minimum is used as the shift because it cannot overflow.
/// `γ = 0` returns the indicator of the first minimiser; `γ = ∞` is uniform.
pub fn gibbs_weights(alpha: &[f64], gamma: Gamma) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(domain("gibbs weights of an empty vector"));
    }
    let n = alpha.len();
    if gamma.is_hard() {
        let mut w = vec![0.0; n];
        w[argmin_first(alpha)] = 1.0;
        return Ok(w);
    }
    if gamma.value().is_infinite() {
        return Ok(vec![1.0 / n as f64; n]);
    }
    let lo = alpha.iter().copied().fold(f64::INFINITY, f64::min);
    let g = gamma.value();
    let mut w: Vec<f64> = alpha.iter().map(|&a| (-(a - lo) / g).exp()).collect();
    let z: f64 = w.iter().sum();
    for v in &mut w {
        *v /= z;
    }
    Ok(w)
}

/// Log-sum-exp soft minimum `-γ log Σ exp(-αᵢ/γ)`; `γ = 0` gives `min α`.
pub fn softmin_lse(alpha: &[f64], gamma: Gamma) -> Result<f64> {
    if alpha.is_empty() {
        return Err(domain("softmin of an empty vector"));
    }
    let lo = alpha.iter().copied().fold(f64::INFINITY, f64::min);
    if gamma.is_hard() {
        return Ok(lo);
    }
    let g = gamma.value();
    if g.is_infinite() {
        return Err(domain("softmin_lse needs a finite gamma"));
    }
    let s: f64 = alpha.iter().map(|&a| (-(a - lo) / g).exp()).sum();
    Ok(lo - g * s.ln())
}

/// Three-argument log-sum-exp soft minimum for the DP inner loop (`γ > 0`).
#[inline]
pub(crate) fn softmin3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    // the minimum contributes exp(0) = 1
    let (lo, x, y) = if a <= b && a <= c {
        (a, b, c)
    } else if b <= c {
        (b, a, c)
    } else {
        (c, a, b)
    };
    let s = 1.0 + (-(x - lo) / gamma).exp() + (-(y - lo) / gamma).exp();
    lo - gamma * s.ln()
}

/// Gibbs-expectation soft minimum `Σ αᵢ wᵢ`.
pub fn softmin_exp(alpha: &[f64], gamma: Gamma) -> Result<f64> {
    softsel(alpha, alpha, gamma)
}

/// Soft selector `Σ βᵢ wᵢ` with `wᵢ` the Gibbs weights of `alpha`.
///
/// At `γ = 0` this returns `β` at the first minimiser of `alpha`.
pub fn softsel(alpha: &[f64], beta: &[f64], gamma: Gamma) -> Result<f64> {
    if alpha.len() != beta.len() {
        return Err(Error::Dimension {
            what: "softsel beta",
            expected: alpha.len(),
            got: beta.len(),
        });
    }
    let w = gibbs_weights(alpha, gamma)?;
    Ok(w.iter().zip(beta).map(|(w, b)| w * b).sum())
}

/// Plain log-sum-exp `log Σ exp(xᵢ)`, max-shifted.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !hi.is_finite() {
        return hi;
    }
    hi + xs.iter().map(|&x| (x - hi).exp()).sum::<f64>().ln()
}

/// Softmax of `xs`, max-shifted.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|&x| (x - hi).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Central-difference gradient check.
///
/// Perturbs every coordinate of `x` by `±step`, compares the resulting
/// derivative estimate against `analytic`, and returns the largest relative
/// error `|a - fd| / max(|a|, |fd|, 1e-8)`.
pub fn grad_check<F>(mut f: F, x: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(domain(format!("finite-difference step must be > 0, got {step}")));
    }
    if analytic.len() != x.len() {
        return Err(Error::Dimension {
            what: "analytic gradient",
            expected: x.len(),
            got: analytic.len(),
        });
    }
    let fd = finite_diff_gradient(&mut f, x, step)?;
    Ok(max_rel_error(analytic, &fd))
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite objective while perturbing coordinate {i}"
            )));
        }
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Largest `|a - b| / max(|a|, |b|, 1e-8)` over paired entries.
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
        .fold(0.0, f64::max)
}
