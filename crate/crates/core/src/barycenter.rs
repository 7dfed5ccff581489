//! Fréchet means under uDTW: a mean series `μ` and a per-frame uncertainty
//! profile `σ_μ`, fitted jointly.
//!
//! Each input `xₙ` is compared with `μ` on the grid `Σₙ = 1 + σ_μ²` (query
//! side fixed at one), or `1 + σ_μ` under [`BarySigma::AddOne`]. The fitted
//! objective is `Σₙ sdtw_γ(Gₙ + β log σ + λ (Σₙ-1)²)` over `(μ, log σ_μ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{dtw_hard, Band, PlanShape};
use crate::error::{domain, Error, Result};
use crate::grid::{Grid, TimeSeries};
use crate::numerics::Gamma;
use crate::optim::{minimize, OptimConfig, Optimizer, StopReason};
use crate::udtw::{
    expectation_objective, surrogate_grad, BaseDistanceKind, LogSigma, PenaltyWeights,
    UdtwConfig, VarianceMatrix,
};

const LOG_SIGMA_MIN: f64 = -6.907_755_278_982_137; // ln 1e-3
const LOG_SIGMA_MAX: f64 = 6.907_755_278_982_137;

/// How `σ_μ` enters the variance grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarySigma {
    /// `Σ = 1 + σ_μ²`
    #[default]
    AddSq,
    /// `Σ = 1 + σ_μ`
    AddOne,
    /// `Σ ≡ 1`; `σ_μ` is not optimised.
    Unit,
}

/// Which variance penalties are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    /// `β log σ` and `λ (Σ-1)²` together.
    #[default]
    Both,
    /// `β log σ` only.
    OmegaLog,
    /// `λ (Σ-1)²` only.
    OmegaPrimeSq,
}

impl std::str::FromStr for BarySigma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add-sq" => Ok(Self::AddSq),
            "add-one" => Ok(Self::AddOne),
            "unit" => Ok(Self::Unit),
            other => Err(domain(format!("unknown barycenter sigma '{other}' (add-sq|add-one|unit)"))),
        }
    }
}

impl std::str::FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Self::Both),
            "omega-log" => Ok(Self::OmegaLog),
            "omega-prime-sq" => Ok(Self::OmegaPrimeSq),
            other => Err(domain(format!("unknown regularizer '{other}' (both|omega-log|omega-prime-sq)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarycenterConfig {
    pub beta: f64,
    pub lambda: f64,
    pub gamma: Gamma,
    pub kind: BaseDistanceKind,
    pub band: Option<Band>,
    pub max_iters: usize,
    pub optimizer: Optimizer,
    pub regularizer: Regularizer,
    pub sigma: BarySigma,
}

impl Default for BarycenterConfig {
    fn default() -> Self {
        Self {
            beta: 0.0,
            lambda: 0.0,
            gamma: Gamma::of(1.0),
            kind: BaseDistanceKind::Normal,
            band: None,
            max_iters: 100,
            optimizer: Optimizer::Lbfgs,
            regularizer: Regularizer::Both,
            sigma: BarySigma::AddSq,
        }
    }
}

impl BarycenterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(domain(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(domain(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.gamma.is_hard() {
            return Err(domain("barycenters need gamma > 0"));
        }
        if self.max_iters == 0 {
            return Err(domain("max_iters must be >= 1"));
        }
        Ok(())
    }

    fn udtw(&self) -> UdtwConfig {
        UdtwConfig {
            gamma: self.gamma,
            kind: self.kind,
            band: self.band,
            log_sigma: LogSigma::Sigma,
        }
    }

    fn weights(&self) -> PenaltyWeights {
        let (b, l) = match self.regularizer {
            Regularizer::Both => (self.beta, self.lambda),
            Regularizer::OmegaLog => (self.beta, 0.0),
            Regularizer::OmegaPrimeSq => (0.0, self.lambda),
        };
        PenaltyWeights { beta: b, lambda: l }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Barycenter {
    pub mu: TimeSeries,
    pub sigma_mu: Vec<f64>,
    /// Fitted objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    /// Expectation-form objective (distance + β penalty + λ Ω') at the end.
    pub expectation_objective: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

impl Barycenter {
    /// A starting point: given mean, unit `σ_μ`, empty trace.
    pub fn init(mu: TimeSeries) -> Self {
        let n = mu.len();
        Self {
            mu,
            sigma_mu: vec![1.0; n],
            objective_trace: vec![],
            expectation_objective: f64::NAN,
            iterations: 0,
            stop: StopReason::MaxIters,
        }
    }
}

/// Support-side variance grid for an input of `rows` frames.
fn variance_for(rule: BarySigma, rows: usize, sigma_mu: &[f64]) -> Result<VarianceMatrix> {
    match rule {
        BarySigma::Unit => Ok(VarianceMatrix::ones(rows, sigma_mu.len())),
        BarySigma::AddSq => VarianceMatrix::new(Grid::from_fn(rows, sigma_mu.len(), |_, n| {
            1.0 + sigma_mu[n] * sigma_mu[n]
        })),
        BarySigma::AddOne => {
            VarianceMatrix::new(Grid::from_fn(rows, sigma_mu.len(), |_, n| 1.0 + sigma_mu[n]))
        }
    }
}

/// Value and gradient of the fitted objective at `x = [μ values; log σ_μ]`.
///
/// Under [`BarySigma::Unit`] `x` holds the mean values only.
pub fn barycenter_objective(
    series: &[TimeSeries],
    dim: usize,
    x: &[f64],
    cfg: &BarycenterConfig,
) -> Result<(f64, Vec<f64>)> {
    let (mu, sigma_mu, nmu) = unpack(x, dim, cfg.sigma)?;
    let ucfg = cfg.udtw();
    let weights = cfg.weights();
    let parts = series
        .par_iter()
        .map(|s| {
            let var = variance_for(cfg.sigma, s.len(), &sigma_mu)?;
            let g = surrogate_grad(s, &mu, &var, &ucfg, weights)?;
            let mut ds = vec![0.0; sigma_mu.len()];
            if cfg.sigma != BarySigma::Unit {
                for m in 0..s.len() {
                    for (n, acc) in ds.iter_mut().enumerate() {
                        *acc += g.d_sigma[(m, n)];
                    }
                }
            }
            Ok((g.value, g.d_psi_prime, ds))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut value = 0.0;
    let mut grad = vec![0.0; x.len()];
    for (v, dmu, dvar) in parts {
        value += v;
        for (a, b) in grad[..nmu].iter_mut().zip(&dmu) {
            *a += b;
        }
        if cfg.sigma == BarySigma::Unit {
            continue;
        }
        // chain ∂/∂Σ through σ_μ = exp(s); no gradient past the clamp
        for (n, dv) in dvar.iter().enumerate() {
            let sig = sigma_mu[n];
            let dsig = if cfg.sigma == BarySigma::AddSq { 2.0 * sig * sig } else { sig };
            if (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&x[nmu + n]) {
                grad[nmu + n] += dv * dsig;
            }
        }
    }
    Ok((value, grad))
}

/// Expectation-form objective `Σₙ distance + β penalty + λ Ω'`.
pub fn barycenter_expectation(
    series: &[TimeSeries],
    bary_mu: &TimeSeries,
    sigma_mu: &[f64],
    cfg: &BarycenterConfig,
) -> Result<f64> {
    let ucfg = cfg.udtw();
    let w = cfg.weights();
    let parts: Vec<Result<f64>> = series
        .par_iter()
        .map(|s| {
            let var = variance_for(cfg.sigma, s.len(), sigma_mu)?;
            expectation_objective(s, bary_mu, &var, &ucfg, w)
        })
        .collect();
    parts.into_iter().sum()
}

fn unpack(x: &[f64], dim: usize, rule: BarySigma) -> Result<(TimeSeries, Vec<f64>, usize)> {
    let len = if rule == BarySigma::Unit { x.len() / dim } else { x.len() / (dim + 1) };
    let nmu = len * dim;
    let mu = TimeSeries::new(dim, x[..nmu].to_vec())?;
    let sigma_mu = if rule == BarySigma::Unit {
        vec![1.0; len]
    } else {
        x[nmu..].iter().map(|s| s.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp()).collect()
    };
    Ok((mu, sigma_mu, nmu))
}

fn canonical_order(series: &[TimeSeries]) -> Vec<TimeSeries> {
    let mut out = series.to_vec();
    out.sort_by(|a, b| {
        a.len().cmp(&b.len()).then_with(|| {
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    out
}

/// Index of the series minimising the summed hard-DTW distance to all others.
pub fn medoid(series: &[TimeSeries], band: Option<Band>) -> Result<usize> {
    if series.is_empty() {
        return Err(domain("medoid of an empty set"));
    }
    let n = series.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let dists: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| hard_dtw_sq(&series[i], &series[j], band))
        .collect();
    let mut totals = vec![0.0; n];
    for (&(i, j), d) in pairs.iter().zip(dists) {
        let d = d?;
        totals[i] += d;
        totals[j] += d;
    }
    Ok(totals
        .iter()
        .enumerate()
        .fold(0, |best, (i, t)| if *t < totals[best] { i } else { best }))
}

pub(crate) fn hard_dtw_sq(a: &TimeSeries, b: &TimeSeries, band: Option<Band>) -> Result<f64> {
    let g = Grid::from_fn(a.len(), b.len(), |m, n| {
        a.frame(m).iter().zip(b.frame(n)).map(|(x, y)| (x - y) * (x - y)).sum()
    });
    let shape = PlanShape::new(a.len(), b.len())?.with_band(band)?;
    Ok(dtw_hard(&g, &shape)?.0)
}

/// Fits `(μ, σ_μ)` of length `target_len` to `series`.
///
/// Inputs are put in a canonical order first, so the result does not depend
/// on how they are listed. Without `init`, `μ` starts at the resampled medoid
/// and `σ_μ` at one.
pub fn frechet_mean(
    series: &[TimeSeries],
    target_len: usize,
    cfg: &BarycenterConfig,
    init: Option<&Barycenter>,
) -> Result<Barycenter> {
    cfg.validate()?;
    if series.is_empty() {
        return Err(domain("barycenter of an empty set"));
    }
    if target_len == 0 {
        return Err(domain("barycenter length must be >= 1"));
    }
    let dim = series[0].dim();
    if series.iter().any(|s| s.dim() != dim || s.is_empty()) {
        return Err(domain("barycenter inputs must be non-empty and share a feature dimension"));
    }
    let series = canonical_order(series);
    let start = match init {
        Some(b) => {
            if b.mu.len() != target_len || b.mu.dim() != dim || b.sigma_mu.len() != target_len {
                return Err(domain("initial barycenter has the wrong shape"));
            }
            if b.sigma_mu.iter().any(|s| !(*s > 0.0)) {
                return Err(domain("initial sigma_mu must be > 0"));
            }
            b.clone()
        }
        None => Barycenter::init(series[medoid(&series, cfg.band)?].resample(target_len)?),
    };
    let mut x0 = start.mu.values().to_vec();
    if cfg.sigma != BarySigma::Unit {
        x0.extend(start.sigma_mu.iter().map(|s| s.ln()));
    }
    let ocfg = OptimConfig {
        optimizer: cfg.optimizer,
        max_iters: cfg.max_iters,
        ..OptimConfig::default()
    };
    let res = minimize(|x| barycenter_objective(&series, dim, x, cfg), &x0, &ocfg)?;
    let (mu, sigma_mu, _) = unpack(&res.x, dim, cfg.sigma)?;
    let expectation = barycenter_expectation(&series, &mu, &sigma_mu, cfg)?;
    Ok(Barycenter {
        mu,
        sigma_mu,
        objective_trace: res.trace,
        expectation_objective: expectation,
        iterations: res.iterations,
        stop: res.stop,
    })
}

/// Parameter swept by [`interpolate_pair`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    Beta(Vec<f64>),
    Lambda(Vec<f64>),
}

/// Barycenters of two series across a sweep of `β` or `λ`, all from the same
/// start point. Unless `cfg.sigma` is `Unit`, `Σ = 1 + σ_μ` is used.
pub fn interpolate_pair(
    x_a: &TimeSeries,
    x_b: &TimeSeries,
    cfg: &BarycenterConfig,
    sweep: &Sweep,
) -> Result<Vec<(f64, Barycenter)>> {
    let pair = [x_a.clone(), x_b.clone()];
    let target = (x_a.len() + x_b.len()).div_ceil(2);
    let mut base = *cfg;
    if base.sigma != BarySigma::Unit {
        base.sigma = BarySigma::AddOne;
    }
    let ordered = canonical_order(&pair);
    let init = Barycenter::init(ordered[0].resample(target)?);
    let values = match sweep {
        Sweep::Beta(v) | Sweep::Lambda(v) => v,
    };
    values
        .iter()
        .map(|&v| {
            let mut c = base;
            match sweep {
                Sweep::Beta(_) => c.beta = v,
                Sweep::Lambda(_) => c.lambda = v,
            }
            frechet_mean(&pair, target, &c, Some(&init)).map(|b| (v, b))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn rand_set(seed: u64, n: usize, len: usize) -> Vec<TimeSeries> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let l = len + rng.random_range(0..3);
                TimeSeries::univariate((0..l).map(|i| (i as f64 * 0.5).sin() + rng.random_range(-0.2..0.2)).collect())
            })
            .collect()
    }

    #[test]
    fn two_points_fixed_sigma() {
        let cfg = BarycenterConfig {
            sigma: BarySigma::Unit,
            ..BarycenterConfig::default()
        };
        let xs = [TimeSeries::univariate(vec![0.0]), TimeSeries::univariate(vec![2.0])];
        let b = frechet_mean(&xs, 1, &cfg, None).unwrap();
        assert!((b.mu.values()[0] - 1.0).abs() < 1e-6, "{:?}", b.mu);
    }

    #[test]
    fn single_point_large_lambda() {
        let cfg = BarycenterConfig {
            lambda: 1e6,
            ..BarycenterConfig::default()
        };
        let xs = [TimeSeries::univariate(vec![5.0])];
        let b = frechet_mean(&xs, 1, &cfg, None).unwrap();
        assert!((b.mu.values()[0] - 5.0).abs() < 1e-6);
        assert!(b.sigma_mu[0] < 1e-2, "{:?}", b.sigma_mu);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let xs = rand_set(3, 4, 5);
        for sigma in [BarySigma::AddSq, BarySigma::AddOne, BarySigma::Unit] {
            let cfg = BarycenterConfig {
                beta: 0.3,
                lambda: 0.2,
                sigma,
                ..BarycenterConfig::default()
            };
            let mut x: Vec<f64> = xs[0].resample(5).unwrap().into_values();
            if sigma != BarySigma::Unit {
                x.extend([0.1, -0.2, 0.3, 0.0, -0.1]);
            }
            let (_, g) = barycenter_objective(&xs, 1, &x, &cfg).unwrap();
            let err = grad_check(|v| barycenter_objective(&xs, 1, v, &cfg).unwrap().0, &x, &g, 1e-5).unwrap();
            assert!(err < 1e-4, "{sigma:?} {err}");
        }
    }

    #[test]
    fn trace_non_increasing_and_permutation_invariant() {
        let xs = rand_set(11, 6, 8);
        let cfg = BarycenterConfig {
            beta: 0.05,
            ..BarycenterConfig::default()
        };
        let b = frechet_mean(&xs, 8, &cfg, None).unwrap();
        assert!(b.iterations <= 100);
        assert!(b.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        let mut rev = xs.clone();
        rev.reverse();
        rev.swap(0, 2);
        let c = frechet_mean(&rev, 8, &cfg, None).unwrap();
        let d = b.mu.values().iter().zip(c.mu.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d < 1e-9);
    }

    #[test]
    fn lambda_sweep_drives_sigma_to_zero() {
        let xs = rand_set(5, 2, 6);
        let out = interpolate_pair(&xs[0], &xs[1], &BarycenterConfig::default(), &Sweep::Lambda(vec![0.0, 1e6])).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out[1].1.sigma_mu.iter().all(|s| *s < 1e-2), "{:?}", out[1].1.sigma_mu);
    }
}
