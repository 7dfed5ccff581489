//! Uncertainty-aware DTW.
//!
//! For a query `ψ` (τ frames), a support `ψ'` (τ' frames) and a strictly
//! positive variance grid `Σ = [σ²ₘₙ]`, every warping path `Π` gets
//!
//! * a weighted cost `wΠ = <Π, D ⊙ Σ†>` (base distance divided by variance), and
//! * an aggregated log-variance `ΩΠ = <Π, log σ>`.
//!
//! The reported distance is the Gibbs expectation of `wΠ` under weights
//! `∝ exp(-wΠ/γ)` and the penalty is the same expectation of `ΩΠ`. Both are
//! linear in `Π`, so each equals `<E[Π], ·>` where `E[Π]` is the soft-DTW
//! alignment of the weighted grid: one forward and one backward DP pass give
//! the exact values in `O(τ τ')` instead of a sum over every path.
//!
//! Training uses a log-sum-exp surrogate instead of the expectation (see
//! [`GradMode`]): `sdtw_γ(D⊙Σ† + β log σ + λ (Σ-1)²)`, the soft minimum of the
//! per-path objective `wΠ + βΩΠ + λΩ'Π`. At `β = λ = 0` this is plain
//! soft-DTW on the weighted grid, and its derivative in `β` at `β = 0` is
//! exactly the penalty above.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::alignment::{Band, CostMatrix, PlanShape};
use crate::error::{domain, Error, Result};
use crate::grid::{Grid, TimeSeries};
use crate::numerics::{finite_diff_gradient, Gamma};
use crate::sigma::SigmaModel;
use crate::softdtw::{sdtw_forward, soft_alignment, SoftAlignment};

/// Smallest standard deviation any cell may use.
pub const SIGMA_MIN: f64 = 1e-3;
/// Largest standard deviation any cell may use.
pub const SIGMA_MAX: f64 = 1e3;

const VAR_MIN: f64 = SIGMA_MIN * SIGMA_MIN;
const VAR_MAX: f64 = SIGMA_MAX * SIGMA_MAX;

/// Pairwise variances `σ²ₘₙ`, all finite and strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMatrix(Grid);

impl VarianceMatrix {
    pub fn new(grid: Grid) -> Result<Self> {
        if let Some(v) = grid.as_slice().iter().find(|v| !v.is_finite() || **v <= 0.0) {
            return Err(domain(format!("variances must be finite and > 0, found {v}")));
        }
        Ok(Self(grid))
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self(Grid::filled(rows, cols, 1.0))
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(Grid::filled(rows, cols, value))
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

impl Deref for VarianceMatrix {
    type Target = Grid;

    fn deref(&self) -> &Grid {
        &self.0
    }
}

/// Penalty weight `β ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Beta(f64);

impl Beta {
    pub fn new(value: f64) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(domain(format!("beta must be finite and >= 0, got {value}")));
        }
        Ok(Self(value))
    }

    pub fn of(value: f64) -> Self {
        Self::new(value).expect("valid beta")
    }

    pub const ZERO: Beta = Beta(0.0);

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Per-cell cost family, one per noise model.
///
/// | kind    | cell cost               |
/// |---------|-------------------------|
/// | Normal  | `‖ψₘ-ψ'ₙ‖₂² / σ²`        |
/// | Laplace | `‖ψₘ-ψ'ₙ‖₁ / σ`          |
/// | Cauchy  | `log(1 + ‖ψₘ-ψ'ₙ‖₂²/σ²)` |
///
/// All three share the penalty `log σ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseDistanceKind {
    #[default]
    Normal,
    Laplace,
    Cauchy,
}

impl BaseDistanceKind {
    pub const ALL: [BaseDistanceKind; 3] = [Self::Normal, Self::Laplace, Self::Cauchy];

    pub fn name(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Laplace => "laplace",
            Self::Cauchy => "cauchy",
        }
    }
}

impl std::str::FromStr for BaseDistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => Ok(Self::Normal),
            "laplace" => Ok(Self::Laplace),
            "cauchy" => Ok(Self::Cauchy),
            other => Err(domain(format!("unknown base distance kind '{other}'"))),
        }
    }
}

/// Which logarithm the penalty aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogSigma {
    /// `log σ = ½ log σ²` (the per-cell MLE term).
    #[default]
    Sigma,
    /// `log σ²`, for sensitivity studies.
    Variance,
}

impl LogSigma {
    #[inline]
    fn eval(self, var: f64) -> f64 {
        match self {
            LogSigma::Sigma => 0.5 * var.ln(),
            LogSigma::Variance => var.ln(),
        }
    }

    #[inline]
    fn deriv(self, var: f64) -> f64 {
        match self {
            LogSigma::Sigma => 0.5 / var,
            LogSigma::Variance => 1.0 / var,
        }
    }
}

#[inline]
fn clamp_var(v: f64) -> (f64, bool) {
    if v < VAR_MIN {
        (VAR_MIN, true)
    } else if v > VAR_MAX {
        (VAR_MAX, true)
    } else {
        (v, false)
    }
}

#[inline]
fn diff_norms(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        l1 += d.abs();
        l2 += d * d;
    }
    (l1, l2)
}

#[inline]
fn cell_cost(kind: BaseDistanceKind, l1: f64, l2: f64, var: f64) -> f64 {
    match kind {
        BaseDistanceKind::Normal => l2 / var,
        BaseDistanceKind::Laplace => l1 / var.sqrt(),
        BaseDistanceKind::Cauchy => (l2 / var).ln_1p(),
    }
}

fn check_pair(psi: &TimeSeries, psi_prime: &TimeSeries, sigma: &Grid) -> Result<()> {
    if psi.is_empty() || psi_prime.is_empty() {
        return Err(domain("uDTW inputs must have at least one frame"));
    }
    if psi.dim() != psi_prime.dim() {
        return Err(Error::Dimension {
            what: "support feature dimension",
            expected: psi.dim(),
            got: psi_prime.dim(),
        });
    }
    if sigma.shape() != (psi.len(), psi_prime.len()) {
        return Err(domain(format!(
            "variance grid is {}x{} but the pair is {}x{}",
            sigma.rows(),
            sigma.cols(),
            psi.len(),
            psi_prime.len()
        )));
    }
    Ok(())
}

/// `D ⊙ Σ†` per `kind`, and the grid of log standard deviations.
pub fn weighted_cost(
    psi: &TimeSeries,
    psi_prime: &TimeSeries,
    sigma: &VarianceMatrix,
    kind: BaseDistanceKind,
) -> Result<(CostMatrix, Grid)> {
    weighted_cost_with(psi, psi_prime, sigma, kind, LogSigma::Sigma)
}

pub fn weighted_cost_with(
    psi: &TimeSeries,
    psi_prime: &TimeSeries,
    sigma: &VarianceMatrix,
    kind: BaseDistanceKind,
    log_sigma: LogSigma,
) -> Result<(CostMatrix, Grid)> {
    check_pair(psi, psi_prime, sigma)?;
    let (t, tp) = sigma.shape();
    let mut grid = Grid::zeros(t, tp);
    let mut logs = Grid::zeros(t, tp);
    for m in 0..t {
        let a = psi.frame(m);
        for n in 0..tp {
            let (l1, l2) = diff_norms(a, psi_prime.frame(n));
            let (var, _) = clamp_var(sigma[(m, n)]);
            grid[(m, n)] = cell_cost(kind, l1, l2, var);
            logs[(m, n)] = log_sigma.eval(var);
        }
    }
    Ok((CostMatrix::new(grid)?, logs))
}

/// Output of [`udtw_eval`].
#[derive(Debug, Clone)]
pub struct UdtwResult {
    /// Gibbs expectation of the weighted path costs.
    pub distance: f64,
    /// Gibbs expectation of the path-aggregated log standard deviations.
    pub penalty: f64,
    /// Expected path membership `E[Π]` under the same weights.
    pub alignment: SoftAlignment,
}

/// Evaluates distance and penalty as `<E[Π], grid>` and `<E[Π], log_sigma>`.
///
/// `γ = 0` gives the hard-minimum path's cost and its aggregated log-variance.
pub fn udtw_eval(
    grid: &Grid,
    log_sigma: &Grid,
    gamma: Gamma,
    shape: &PlanShape,
) -> Result<UdtwResult> {
    shape.check_grid(log_sigma)?;
    let (_, alignment) = soft_alignment(grid, gamma, shape)?;
    Ok(UdtwResult {
        distance: alignment.dot(grid),
        penalty: alignment.dot(log_sigma),
        alignment,
    })
}

/// `<E[Π], (Σ-1)²>`: the quadratic alternative to the log penalty, which
/// keeps variances near one.
pub fn prime_penalty(alignment: &SoftAlignment, sigma: &VarianceMatrix) -> f64 {
    alignment
        .as_slice()
        .iter()
        .zip(sigma.as_slice())
        .map(|(a, s)| a * (clamp_var(*s).0 - 1.0).powi(2))
        .sum()
}

/// Everything needed to evaluate uDTW on a pair besides the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UdtwConfig {
    pub gamma: Gamma,
    pub kind: BaseDistanceKind,
    pub band: Option<Band>,
    pub log_sigma: LogSigma,
}

impl Default for UdtwConfig {
    fn default() -> Self {
        Self {
            gamma: Gamma::of(1.0),
            kind: BaseDistanceKind::Normal,
            band: None,
            log_sigma: LogSigma::Sigma,
        }
    }
}

impl UdtwConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        Self {
            gamma: Gamma::of(gamma),
            ..Self::default()
        }
    }

    pub fn shape(&self, tau: usize, tau_prime: usize) -> Result<PlanShape> {
        PlanShape::new(tau, tau_prime)?.with_band(self.band)
    }

    /// Distance and penalty for one pair.
    pub fn eval(
        &self,
        psi: &TimeSeries,
        psi_prime: &TimeSeries,
        sigma: &VarianceMatrix,
    ) -> Result<UdtwResult> {
        let (grid, logs) = weighted_cost_with(psi, psi_prime, sigma, self.kind, self.log_sigma)?;
        udtw_eval(&grid, &logs, self.gamma, &self.shape(psi.len(), psi_prime.len())?)
    }
}

/// How [`udtw_grad`] differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradMode {
    /// Exact gradient of the surrogate `sdtw_γ(D⊙Σ† + β log σ)`.
    LseExact,
    /// Gradient of `<A, D⊙Σ†> + β<A, log σ>` with the alignment `A` frozen.
    AlignmentFixed,
    /// Central differences of the expectation value `distance + β penalty`.
    /// Costs two DP passes per coordinate; meant for tests.
    FiniteDiff,
}

/// Value and gradients of a pair objective.
#[derive(Debug, Clone)]
pub struct PairGrad {
    pub value: f64,
    /// Gradient w.r.t. the query values, laid out like `psi.values()`.
    pub d_psi: Vec<f64>,
    /// Gradient w.r.t. the support values.
    pub d_psi_prime: Vec<f64>,
    /// Gradient w.r.t. each variance entry `σ²ₘₙ`.
    pub d_sigma: Grid,
}

/// Multipliers for the two variance penalties in a surrogate objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PenaltyWeights {
    /// Weight of `log σ`.
    pub beta: f64,
    /// Weight of `(Σ-1)²`.
    pub lambda: f64,
}

/// Chains cell-level gradients `∂/∂G`, `∂/∂L`, `∂/∂Q` (weighted cost,
/// log-sigma, quadratic penalty) into the series and variance entries.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backprop_cells(
    psi: &TimeSeries,
    psi_prime: &TimeSeries,
    sigma: &Grid,
    kind: BaseDistanceKind,
    log_sigma: LogSigma,
    d_grid: &Grid,
    d_log: Option<&Grid>,
    d_quad: Option<&Grid>,
) -> (Vec<f64>, Vec<f64>, Grid) {
    let dim = psi.dim();
    let (t, tp) = sigma.shape();
    let mut d_psi = vec![0.0; t * dim];
    let mut d_psi_prime = vec![0.0; tp * dim];
    let mut d_sigma = Grid::zeros(t, tp);
    for m in 0..t {
        let a = psi.frame(m);
        for n in 0..tp {
            let b = psi_prime.frame(n);
            let (var, clamped) = clamp_var(sigma[(m, n)]);
            let wg = d_grid[(m, n)];
            let wl = d_log.map_or(0.0, |g| g[(m, n)]);
            let wq = d_quad.map_or(0.0, |g| g[(m, n)]);
            if wg == 0.0 && wl == 0.0 && wq == 0.0 {
                continue;
            }
            let (l1, l2) = diff_norms(a, b);
            // d cost / d var, and the per-coordinate factor for d cost / d a_k
            let (dvar, coord): (f64, Box<dyn Fn(f64) -> f64>) = match kind {
                BaseDistanceKind::Normal => (-l2 / (var * var), Box::new(move |d| 2.0 * d / var)),
                BaseDistanceKind::Laplace => {
                    let sd = var.sqrt();
                    (-l1 / (2.0 * var * sd), Box::new(move |d: f64| {
                        if d > 0.0 {
                            1.0 / sd
                        } else if d < 0.0 {
                            -1.0 / sd
                        } else {
                            0.0
                        }
                    }))
                }
                BaseDistanceKind::Cauchy => {
                    let den = var + l2;
                    (-l2 / (var * den), Box::new(move |d| 2.0 * d / den))
                }
            };
            if wg != 0.0 {
                for k in 0..dim {
                    let g = wg * coord(a[k] - b[k]);
                    d_psi[m * dim + k] += g;
                    d_psi_prime[n * dim + k] -= g;
                }
            }
            if !clamped {
                d_sigma[(m, n)] =
                    wg * dvar + wl * log_sigma.deriv(var) + wq * 2.0 * (var - 1.0);
            }
        }
    }
    (d_psi, d_psi_prime, d_sigma)
}

/// Per-cell energies `G`, `L` and `Q` for a pair.
fn cell_grids(
    psi: &TimeSeries,
    psi_prime: &TimeSeries,
    sigma: &VarianceMatrix,
    kind: BaseDistanceKind,
    log_sigma: LogSigma,
) -> Result<(Grid, Grid, Grid)> {
    let (g, l) = weighted_cost_with(psi, psi_prime, sigma, kind, log_sigma)?;
    let q = sigma.map(|s| (clamp_var(s).0 - 1.0).powi(2));
    Ok((g.into_grid(), l, q))
}

/// Surrogate `sdtw_γ(G + βL + λQ)` with exact gradients.
pub fn surrogate_grad(
    psi: &TimeSeries,
    psi_prime: &TimeSeries,
    sigma: &VarianceMatrix,
    cfg: &UdtwConfig,
    weights: PenaltyWeights,
) -> Result<PairGrad> {
    if cfg.gamma.is_hard() {
        return Err(domain("gradients need gamma > 0"));
    }
    let (g, l, q) = cell_grids(psi, psi_prime, sigma, cfg.kind, cfg.log_sigma)?;
    let mut energy = g;
    if weights.beta != 0.0 {
        energy = energy.axpy(weights.beta, &l);
    }
    if weights.lambda != 0.0 {
        energy = energy.axpy(weights.lambda, &q);
    }
    let shape = cfg.shape(psi.len(), psi_prime.len())?;
    let (value, a) = soft_alignment(&energy, cfg.gamma, &shape)?;
    let dl = a.map(|v| v * weights.beta);
    let dq = a.map(|v| v * weights.lambda);
    let (d_psi, d_psi_prime, d_sigma) = backprop_cells(
        psi,
        psi_prime,
        sigma,
        cfg.kind,
        cfg.log_sigma,
        &a,
        Some(&dl),
        (weights.lambda != 0.0).then_some(&dq),
    );
    Ok(PairGrad {
        value,
        d_psi,
        d_psi_prime,
        d_sigma,
    })
}

/// Expectation objective `distance + β penalty + λ <E[Π], (Σ-1)²>`.
pub fn expectation_objective(
    psi: &TimeSeries,
    psi_prime: &TimeSeries,
    sigma: &VarianceMatrix,
    cfg: &UdtwConfig,
    weights: PenaltyWeights,
) -> Result<f64> {
    let r = cfg.eval(psi, psi_prime, sigma)?;
    let mut v = r.distance + weights.beta * r.penalty;
    if weights.lambda != 0.0 {
        v += weights.lambda * prime_penalty(&r.alignment, sigma);
    }
    Ok(v)
}

/// Gradient of a pair objective w.r.t. both series and the variances.
///
/// See [`GradMode`] for what is differentiated. `beta = 0` gives the pure
/// distance.
#[allow(clippy::too_many_arguments)]
pub fn udtw_grad(
    psi: &TimeSeries,
    psi_prime: &TimeSeries,
    sigma: &VarianceMatrix,
    kind: BaseDistanceKind,
    gamma: Gamma,
    beta: Beta,
    mode: GradMode,
    shape: &PlanShape,
) -> Result<PairGrad> {
    if gamma.is_hard() {
        return Err(domain("gradients need gamma > 0"));
    }
    let cfg = UdtwConfig {
        gamma,
        kind,
        band: shape.band,
        log_sigma: LogSigma::Sigma,
    };
    shape.check_grid(sigma)?;
    let weights = PenaltyWeights {
        beta: beta.value(),
        lambda: 0.0,
    };
    match mode {
        GradMode::LseExact => surrogate_grad(psi, psi_prime, sigma, &cfg, weights),
        GradMode::AlignmentFixed => {
            let (g, l, _) = cell_grids(psi, psi_prime, sigma, kind, cfg.log_sigma)?;
            let r = udtw_eval(&g, &l, gamma, shape)?;
            let dl = r.alignment.map(|v| v * beta.value());
            let (d_psi, d_psi_prime, d_sigma) =
                backprop_cells(psi, psi_prime, sigma, kind, cfg.log_sigma, &r.alignment, Some(&dl), None);
            Ok(PairGrad {
                value: r.distance + beta.value() * r.penalty,
                d_psi,
                d_psi_prime,
                d_sigma,
            })
        }
        GradMode::FiniteDiff => {
            let np = psi.values().len();
            let nq = psi_prime.values().len();
            let mut x: Vec<f64> = psi.values().to_vec();
            x.extend_from_slice(psi_prime.values());
            x.extend_from_slice(sigma.as_slice());
            // log-parametrise the variances so probes stay positive
            for v in &mut x[np + nq..] {
                *v = v.ln();
            }
            let (t, tp) = sigma.shape();
            let eval = |x: &[f64]| -> f64 {
                let a = TimeSeries::new(psi.dim(), x[..np].to_vec()).unwrap();
                let b = TimeSeries::new(psi.dim(), x[np..np + nq].to_vec()).unwrap();
                let s = Grid::from_vec(t, tp, x[np + nq..].iter().map(|v| v.exp()).collect()).unwrap();
                let s = VarianceMatrix(s);
                expectation_objective(&a, &b, &s, &cfg, weights).unwrap_or(f64::NAN)
            };
            let value = eval(&x);
            let fd = finite_diff_gradient(eval, &x, 1e-6)?;
            let d_sigma = Grid::from_vec(
                t,
                tp,
                fd[np + nq..]
                    .iter()
                    .zip(sigma.as_slice())
                    .map(|(g, s)| g / s)
                    .collect(),
            )?;
            Ok(PairGrad {
                value,
                d_psi: fd[..np].to_vec(),
                d_psi_prime: fd[np..np + nq].to_vec(),
                d_sigma,
            })
        }
    }
}

/// Per-cell minimiser of `β log σ + e/σ²`: `σ² = 2e/β`.
///
/// `e = 0` has no interior optimum and returns [`SIGMA_MIN`]. The result is
/// clamped to `[SIGMA_MIN, SIGMA_MAX]`.
pub fn free_sigma_mle(cell_error: f64, beta: Beta) -> Result<f64> {
    if !(cell_error >= 0.0) || !cell_error.is_finite() {
        return Err(domain(format!("cell error must be finite and >= 0, got {cell_error}")));
    }
    if beta.value() <= 0.0 {
        return Err(domain("free sigma MLE needs beta > 0"));
    }
    if cell_error == 0.0 {
        return Ok(SIGMA_MIN);
    }
    Ok((2.0 * cell_error / beta.value()).sqrt().clamp(SIGMA_MIN, SIGMA_MAX))
}

/// One labelled pair for [`similarity_loss`]: `delta = 0` for same class,
/// `1` otherwise.
#[derive(Debug, Clone)]
pub struct LabelledPair {
    pub psi: TimeSeries,
    pub psi_prime: TimeSeries,
    pub delta: f64,
}

/// Aggregate loss and gradients from [`similarity_loss`].
#[derive(Debug, Clone)]
pub struct SimilarityLoss {
    pub loss: f64,
    /// Gradient w.r.t. the parameters of the variance model.
    pub d_params: Vec<f64>,
    /// Per-pair gradients w.r.t. the two series.
    pub d_series: Vec<(Vec<f64>, Vec<f64>)>,
}

/// `Σₙ (dₙ - δₙ)² + β Ωₙ` with exact gradients of the log-sum-exp surrogate.
///
/// `dₙ = sdtw_γ(G)` and the penalty term is `sdtw_γ(G + βL) - sdtw_γ(G)`,
/// which tends to `β Ω` as `β → 0`. On a single cell both are exact.
pub fn similarity_loss(
    pairs: &[LabelledPair],
    beta: Beta,
    cfg: &UdtwConfig,
    sigma_model: &dyn SigmaModel,
) -> Result<SimilarityLoss> {
    use rayon::prelude::*;

    if pairs.is_empty() {
        return Err(domain("similarity loss over an empty pair list"));
    }
    if cfg.gamma.is_hard() {
        return Err(domain("gradients need gamma > 0"));
    }
    let per_pair = pairs
        .par_iter()
        .map(|p| {
            let sigma = sigma_model.variance(&p.psi, &p.psi_prime)?;
            let (g, l, _) = cell_grids(&p.psi, &p.psi_prime, &sigma, cfg.kind, cfg.log_sigma)?;
            let shape = cfg.shape(p.psi.len(), p.psi_prime.len())?;
            let (d, a) = soft_alignment(&g, cfg.gamma, &shape)?;
            let resid = d - p.delta;
            let mut loss = resid * resid;
            let mut dg = a.map(|v| 2.0 * resid * v);
            let mut dl = Grid::zeros(g.rows(), g.cols());
            if beta.value() > 0.0 {
                let joint = g.axpy(beta.value(), &l);
                let (j, aj) = soft_alignment(&joint, cfg.gamma, &shape)?;
                loss += j - d;
                dg = dg.axpy(1.0, &aj).axpy(-1.0, &a);
                dl = aj.map(|v| beta.value() * v);
            }
            let (dpsi, dpsip, dsigma) = backprop_cells(
                &p.psi,
                &p.psi_prime,
                &sigma,
                cfg.kind,
                cfg.log_sigma,
                &dg,
                Some(&dl),
                None,
            );
            let (dparams, dpsi2, dpsip2) = sigma_model.backward(&p.psi, &p.psi_prime, &dsigma)?;
            let dpsi = dpsi.iter().zip(&dpsi2).map(|(a, b)| a + b).collect();
            let dpsip = dpsip.iter().zip(&dpsip2).map(|(a, b)| a + b).collect();
            Ok((loss, dparams, dpsi, dpsip))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut d_params = vec![0.0; sigma_model.num_params()];
    let mut d_series = Vec::with_capacity(pairs.len());
    for (l, dp, a, b) in per_pair {
        loss += l;
        for (acc, v) in d_params.iter_mut().zip(&dp) {
            *acc += v;
        }
        d_series.push((a, b));
    }
    Ok(SimilarityLoss {
        loss,
        d_params,
        d_series,
    })
}

/// Convenience: `sdtw_γ` of the weighted grid (the log-sum-exp distance).
pub fn udtw_lse_distance(
    psi: &TimeSeries,
    psi_prime: &TimeSeries,
    sigma: &VarianceMatrix,
    cfg: &UdtwConfig,
) -> Result<f64> {
    let (g, _) = weighted_cost_with(psi, psi_prime, sigma, cfg.kind, cfg.log_sigma)?;
    Ok(sdtw_forward(&g, cfg.gamma, &cfg.shape(psi.len(), psi_prime.len())?)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{dtw_hard, enumerate_paths, path_cost};
    use crate::numerics::{gibbs_weights, grad_check, max_rel_error, softmin_exp, softsel};
    use crate::sigma::UnitSigma;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn rand_series(rng: &mut Xoshiro256PlusPlus, len: usize, dim: usize) -> TimeSeries {
        TimeSeries::new(dim, (0..len * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rand_sigma(rng: &mut Xoshiro256PlusPlus, t: usize, tp: usize) -> VarianceMatrix {
        VarianceMatrix::new(Grid::from_fn(t, tp, |_, _| rng.random_range(0.3..2.0))).unwrap()
    }

    /// Literal path-sum evaluation: enumerate paths, softmin_exp / softsel.
    fn brute(grid: &Grid, logs: &Grid, gamma: Gamma, shape: &PlanShape) -> (f64, f64) {
        let paths = enumerate_paths(shape).unwrap();
        let w: Vec<f64> = paths.iter().map(|p| path_cost(p, grid).unwrap()).collect();
        let o: Vec<f64> = paths.iter().map(|p| path_cost(p, logs).unwrap()).collect();
        (softmin_exp(&w, gamma).unwrap(), softsel(&w, &o, gamma).unwrap())
    }

    #[test]
    fn weighted_cost_examples() {
        let a = TimeSeries::univariate(vec![1.5]);
        let (g, l) = weighted_cost(&a, &a, &VarianceMatrix::ones(1, 1), BaseDistanceKind::Normal).unwrap();
        assert_eq!(g[(0, 0)], 0.0);
        assert_eq!(l[(0, 0)], 0.0);
        let x = TimeSeries::univariate(vec![0.0]);
        let y = TimeSeries::univariate(vec![2.0]);
        let (g, _) = weighted_cost(&x, &y, &VarianceMatrix::constant(1, 1, 2.0).unwrap(), BaseDistanceKind::Normal).unwrap();
        assert_eq!(g[(0, 0)], 2.0);
        // σ = 2, so σ² = 4
        let (g, _) = weighted_cost(&x, &y, &VarianceMatrix::constant(1, 1, 4.0).unwrap(), BaseDistanceKind::Laplace).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        let (g, _) = weighted_cost(&x, &y, &VarianceMatrix::constant(1, 1, 4.0).unwrap(), BaseDistanceKind::Cauchy).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn weighted_cost_errors() {
        let x = TimeSeries::univariate(vec![0.0, 1.0]);
        let y = TimeSeries::new(2, vec![0.0, 1.0]).unwrap();
        assert!(weighted_cost(&x, &y, &VarianceMatrix::ones(2, 1), BaseDistanceKind::Normal).is_err());
        assert!(weighted_cost(&x, &x, &VarianceMatrix::ones(1, 2), BaseDistanceKind::Normal).is_err());
        assert!(VarianceMatrix::new(Grid::from_rows(&[[1.0, 0.0]]).unwrap()).is_err());
        assert!(VarianceMatrix::new(Grid::from_rows(&[[1.0, -2.0]]).unwrap()).is_err());
    }

    #[test]
    fn eval_examples() {
        let g = Grid::from_rows(&[[2.0]]).unwrap();
        let l = Grid::from_rows(&[[0.5 * 2f64.ln()]]).unwrap();
        let r = udtw_eval(&g, &l, Gamma::of(1.0), &PlanShape::of(&g).unwrap()).unwrap();
        assert_eq!(r.distance, 2.0);
        assert_abs_diff_eq!(r.penalty, 0.346_573_590_279_972_6, epsilon = 1e-15);

        let g = Grid::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let l = Grid::zeros(2, 2);
        let r = udtw_eval(&g, &l, Gamma::of(1.0), &PlanShape::of(&g).unwrap()).unwrap();
        let e = 1f64.exp();
        assert_abs_diff_eq!(r.distance, 2.0 / (e + 2.0), epsilon = 1e-14);
        assert_abs_diff_eq!(r.distance, 0.423_883_115_234_170_9, epsilon = 1e-12);
        assert_eq!(r.penalty, 0.0);
    }

    #[test]
    fn dp_matches_path_enumeration_all_kinds() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(99);
        for _ in 0..40 {
            let t = rng.random_range(1..=6);
            let tp = rng.random_range(1..=6);
            let dim = rng.random_range(1..=3);
            let a = rand_series(&mut rng, t, dim);
            let b = rand_series(&mut rng, tp, dim);
            let s = rand_sigma(&mut rng, t, tp);
            for kind in BaseDistanceKind::ALL {
                let (g, l) = weighted_cost(&a, &b, &s, kind).unwrap();
                let shape = PlanShape::of(&g).unwrap();
                for gamma in [0.01, 0.1, 1.0, 10.0] {
                    let gamma = Gamma::of(gamma);
                    let r = udtw_eval(&g, &l, gamma, &shape).unwrap();
                    let (bd, bp) = brute(&g, &l, gamma, &shape);
                    assert!((r.distance - bd).abs() <= 1e-9 * bd.abs().max(1.0));
                    assert!((r.penalty - bp).abs() <= 1e-9 * bp.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn unit_variance_identities() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        let a = rand_series(&mut rng, 4, 2);
        let b = rand_series(&mut rng, 5, 2);
        let (g, l) = weighted_cost(&a, &b, &VarianceMatrix::ones(4, 5), BaseDistanceKind::Normal).unwrap();
        let shape = PlanShape::of(&g).unwrap();
        let r = udtw_eval(&g, &l, Gamma::of(0.5), &shape).unwrap();
        assert_eq!(r.penalty, 0.0);
        let paths = enumerate_paths(&shape).unwrap();
        let costs: Vec<f64> = paths.iter().map(|p| path_cost(p, &g).unwrap()).collect();
        assert!((r.distance - softmin_exp(&costs, Gamma::of(0.5)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn symmetry_under_swap() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(17);
        for kind in BaseDistanceKind::ALL {
            let a = rand_series(&mut rng, 5, 2);
            let b = rand_series(&mut rng, 3, 2);
            let s = rand_sigma(&mut rng, 5, 3);
            let cfg = UdtwConfig { kind, ..UdtwConfig::with_gamma(0.3) };
            let r1 = cfg.eval(&a, &b, &s).unwrap();
            let r2 = cfg.eval(&b, &a, &s.transpose()).unwrap();
            assert!((r1.distance - r2.distance).abs() < 1e-12);
            assert!((r1.penalty - r2.penalty).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_scaling() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(23);
        let a = rand_series(&mut rng, 4, 1);
        let b = rand_series(&mut rng, 4, 1);
        let s = rand_sigma(&mut rng, 4, 4);
        let c = 3.0;
        let sc = VarianceMatrix::new(s.map(|v| v * c)).unwrap();
        let (g1, l1) = weighted_cost(&a, &b, &s, BaseDistanceKind::Normal).unwrap();
        let (g2, l2) = weighted_cost(&a, &b, &sc, BaseDistanceKind::Normal).unwrap();
        for i in 0..16 {
            assert!((g2.as_slice()[i] - g1.as_slice()[i] / c).abs() < 1e-12);
            assert!((l2.as_slice()[i] - l1.as_slice()[i] - 0.5 * c.ln()).abs() < 1e-12);
        }
        let shape = PlanShape::of(&g1).unwrap();
        let r = udtw_eval(&g2, &l2, Gamma::of(0.2), &shape).unwrap();
        let (bd, bp) = brute(&g2, &l2, Gamma::of(0.2), &shape);
        assert!((r.distance - bd).abs() < 1e-9 && (r.penalty - bp).abs() < 1e-9);
    }

    #[test]
    fn hard_limit() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(31);
        for _ in 0..20 {
            let a = rand_series(&mut rng, 5, 1);
            let b = rand_series(&mut rng, 4, 1);
            let s = rand_sigma(&mut rng, 5, 4);
            let (g, l) = weighted_cost(&a, &b, &s, BaseDistanceKind::Normal).unwrap();
            let shape = PlanShape::of(&g).unwrap();
            let (hd, hp) = dtw_hard(&g, &shape).unwrap();
            for gamma in [Gamma::HARD, Gamma::of(1e-9)] {
                let r = udtw_eval(&g, &l, gamma, &shape).unwrap();
                assert!((r.distance - hd).abs() < 1e-6);
                assert!((r.penalty - path_cost(&hp, &l).unwrap()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn lse_exact_gradients_match_finite_differences() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(41);
        for kind in BaseDistanceKind::ALL {
            let a = rand_series(&mut rng, 3, 2);
            let b = rand_series(&mut rng, 4, 2);
            let s = rand_sigma(&mut rng, 3, 4);
            let shape = PlanShape::new(3, 4).unwrap();
            let gamma = Gamma::of(0.5);
            let beta = Beta::of(0.7);
            let gr = udtw_grad(&a, &b, &s, kind, gamma, beta, GradMode::LseExact, &shape).unwrap();
            let cfg = UdtwConfig { kind, gamma, ..UdtwConfig::default() };
            let w = PenaltyWeights { beta: beta.value(), lambda: 0.0 };
            let f = |x: &[f64]| {
                let aa = TimeSeries::new(2, x[..6].to_vec()).unwrap();
                let bb = TimeSeries::new(2, x[6..14].to_vec()).unwrap();
                let ss = VarianceMatrix::new(Grid::from_vec(3, 4, x[14..].to_vec()).unwrap()).unwrap();
                surrogate_grad(&aa, &bb, &ss, &cfg, w).unwrap().value
            };
            let mut x = a.values().to_vec();
            x.extend_from_slice(b.values());
            x.extend_from_slice(s.as_slice());
            let mut analytic = gr.d_psi.clone();
            analytic.extend_from_slice(&gr.d_psi_prime);
            analytic.extend_from_slice(gr.d_sigma.as_slice());
            let err = grad_check(f, &x, &analytic, 1e-6).unwrap();
            assert!(err < 1e-5, "{kind:?}: {err}");
        }
    }

    #[test]
    fn constant_zero_grid_has_zero_series_gradient() {
        let a = TimeSeries::univariate(vec![1.0, 1.0, 1.0]);
        let b = TimeSeries::univariate(vec![1.0, 1.0]);
        let s = VarianceMatrix::ones(3, 2);
        let shape = PlanShape::new(3, 2).unwrap();
        for mode in [GradMode::LseExact, GradMode::AlignmentFixed, GradMode::FiniteDiff] {
            let g = udtw_grad(&a, &b, &s, BaseDistanceKind::Normal, Gamma::of(1.0), Beta::ZERO, mode, &shape).unwrap();
            assert!(g.d_psi.iter().chain(&g.d_psi_prime).all(|v| v.abs() < 1e-8), "{mode:?}");
        }
    }

    #[test]
    fn alignment_fixed_close_to_finite_diff_at_small_gamma() {
        // The frozen-alignment gradient drops the covariance term of the
        // Gibbs expectation, which vanishes only when one path dominates.
        // Instances are kept when the best path beats the runner-up by 20γ.
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let shape = PlanShape::new(3, 4).unwrap();
        let g = Gamma::of(0.01);
        let mut checked = 0;
        while checked < 5 {
            let a = rand_series(&mut rng, 3, 1);
            let b = rand_series(&mut rng, 4, 1);
            let s = rand_sigma(&mut rng, 3, 4);
            let (grid, _) = weighted_cost(&a, &b, &s, BaseDistanceKind::Normal).unwrap();
            let mut costs: Vec<f64> = enumerate_paths(&shape)
                .unwrap()
                .iter()
                .map(|p| path_cost(p, &grid).unwrap())
                .collect();
            costs.sort_by(f64::total_cmp);
            if costs[1] - costs[0] < 20.0 * g.value() {
                continue;
            }
            checked += 1;
            let fixed = udtw_grad(&a, &b, &s, BaseDistanceKind::Normal, g, Beta::ZERO, GradMode::AlignmentFixed, &shape).unwrap();
            let fd = udtw_grad(&a, &b, &s, BaseDistanceKind::Normal, g, Beta::ZERO, GradMode::FiniteDiff, &shape).unwrap();
            let mut x = fixed.d_psi.clone();
            x.extend_from_slice(&fixed.d_psi_prime);
            let mut y = fd.d_psi.clone();
            y.extend_from_slice(&fd.d_psi_prime);
            let err = max_rel_error(&x, &y);
            assert!(err < 1e-2, "{err}");
            assert!((fixed.value - fd.value).abs() < 1e-12);
        }
    }

    #[test]
    fn free_sigma_examples_and_optimality() {
        assert_abs_diff_eq!(free_sigma_mle(1.0, Beta::of(2.0)).unwrap().powi(2), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(free_sigma_mle(2.0, Beta::of(4.0)).unwrap().powi(2), 1.0, epsilon = 1e-15);
        let s1 = free_sigma_mle(0.3, Beta::of(1.1)).unwrap();
        let s4 = free_sigma_mle(1.2, Beta::of(1.1)).unwrap();
        assert_abs_diff_eq!(s4, 2.0 * s1, epsilon = 1e-14);
        assert_eq!(free_sigma_mle(0.0, Beta::of(1.0)).unwrap(), SIGMA_MIN);
        assert!(free_sigma_mle(1.0, Beta::ZERO).is_err());
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(6);
        for _ in 0..100 {
            let e: f64 = rng.random_range(0.01..10.0);
            let beta: f64 = rng.random_range(0.1..5.0);
            let obj = |var: f64| beta * 0.5 * var.ln() + e / var;
            let v = free_sigma_mle(e, Beta::of(beta)).unwrap().powi(2);
            assert!(obj(v) <= obj(0.5 * v) && obj(v) <= obj(2.0 * v));
        }
    }

    #[test]
    fn similarity_loss_examples() {
        let cfg = UdtwConfig::default();
        let same = LabelledPair {
            psi: TimeSeries::univariate(vec![3.0]),
            psi_prime: TimeSeries::univariate(vec![3.0]),
            delta: 0.0,
        };
        let out = similarity_loss(&[same], Beta::ZERO, &cfg, &UnitSigma).unwrap();
        assert_eq!(out.loss, 0.0);

        // grid 2 with σ² = 1: ψ = 0, ψ' = √2
        let far = LabelledPair {
            psi: TimeSeries::univariate(vec![0.0]),
            psi_prime: TimeSeries::univariate(vec![2f64.sqrt()]),
            delta: 1.0,
        };
        let out = similarity_loss(std::slice::from_ref(&far), Beta::ZERO, &cfg, &UnitSigma).unwrap();
        assert_abs_diff_eq!(out.loss, 1.0, epsilon = 1e-12);

        // σ² = e² makes log σ = 1; β = 2 adds 2
        let e2 = 1f64.exp().powi(2);
        let model = crate::sigma::ConstantSigma::new(e2).unwrap();
        let base = similarity_loss(std::slice::from_ref(&far), Beta::ZERO, &cfg, &model).unwrap().loss;
        let with = similarity_loss(&[far], Beta::of(2.0), &cfg, &model).unwrap().loss;
        assert_abs_diff_eq!(with - base, 2.0, epsilon = 1e-12);

        assert!(similarity_loss(&[], Beta::ZERO, &cfg, &UnitSigma).is_err());
    }

    #[test]
    fn similarity_loss_series_gradient() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
        let a = rand_series(&mut rng, 4, 1);
        let b = rand_series(&mut rng, 3, 1);
        let cfg = UdtwConfig::with_gamma(0.5);
        let model = crate::sigma::ConstantSigma::new(0.7).unwrap();
        let beta = Beta::of(0.4);
        let pair = LabelledPair { psi: a.clone(), psi_prime: b.clone(), delta: 1.0 };
        let out = similarity_loss(&[pair], beta, &cfg, &model).unwrap();
        let mut x = a.values().to_vec();
        x.extend_from_slice(b.values());
        let mut analytic = out.d_series[0].0.clone();
        analytic.extend_from_slice(&out.d_series[0].1);
        let err = grad_check(
            |x| {
                let p = LabelledPair {
                    psi: TimeSeries::univariate(x[..4].to_vec()),
                    psi_prime: TimeSeries::univariate(x[4..].to_vec()),
                    delta: 1.0,
                };
                similarity_loss(&[p], beta, &cfg, &model).unwrap().loss
            },
            &x,
            &analytic,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn gibbs_weights_reproduce_alignment() {
        // E[Π] from enumeration equals the DP alignment used by udtw_eval
        let g = Grid::from_rows(&[[0.2, 1.0, 0.4], [0.9, 0.1, 0.3]]).unwrap();
        let shape = PlanShape::of(&g).unwrap();
        let r = udtw_eval(&g, &Grid::zeros(2, 3), Gamma::of(0.4), &shape).unwrap();
        let paths = enumerate_paths(&shape).unwrap();
        let w = gibbs_weights(&paths.iter().map(|p| path_cost(p, &g).unwrap()).collect::<Vec<_>>(), Gamma::of(0.4)).unwrap();
        let mut a = Grid::zeros(2, 3);
        for (p, wp) in paths.iter().zip(&w) {
            for &c in p.cells() {
                a[c] += wp;
            }
        }
        assert!(a.max_abs_diff(&r.alignment) < 1e-12);
    }
}
