//! Brute-force path enumeration checked against the dynamic programs, plus
//! finite-difference checks of the gradients.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::alignment::{enumerate_paths_with_cap, path_cost, PlanShape, DEFAULT_PATH_CAP};
use crate::error::{domain, Result};
use crate::grid::{Grid, TimeSeries};
use crate::numerics::{finite_diff_gradient, gibbs_weights, max_rel_error, Gamma};
use crate::softdtw::{sdtw_backward, sdtw_forward};
use crate::udtw::{surrogate_grad, weighted_cost, BaseDistanceKind, PenaltyWeights, UdtwConfig, VarianceMatrix};

/// Distance, penalty and alignment by enumerating every path.
#[derive(Debug, Clone)]
pub struct BruteForce {
    pub distance: f64,
    pub penalty: f64,
    pub alignment: Grid,
    pub paths: usize,
}

pub fn brute_force_udtw(grid: &Grid, log_sigma: &Grid, gamma: Gamma, shape: &PlanShape, cap: u128) -> Result<BruteForce> {
    let paths = enumerate_paths_with_cap(shape, cap)?;
    let costs: Vec<f64> = paths.iter().map(|p| path_cost(p, grid)).collect::<Result<_>>()?;
    let w = gibbs_weights(&costs, gamma)?;
    let mut distance = 0.0;
    let mut penalty = 0.0;
    let mut alignment = Grid::zeros(grid.rows(), grid.cols());
    for ((p, c), wi) in paths.iter().zip(&costs).zip(&w) {
        distance += wi * c;
        penalty += wi * path_cost(p, log_sigma)?;
        for &(m, n) in p.cells() {
            alignment[(m, n)] += wi;
        }
    }
    Ok(BruteForce {
        distance,
        penalty,
        alignment,
        paths: paths.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Largest `(τ, τ')`; each trial draws sizes in `1..=` these.
    pub sizes: (usize, usize),
    pub trials: usize,
    pub seed: u64,
    pub gammas: Vec<f64>,
    pub kinds: Vec<BaseDistanceKind>,
    pub value_tol: f64,
    pub grad_tol: f64,
    pub cap: u128,
    /// Overwrite one padded forward-table entry before the backward pass.
    #[serde(skip)]
    pub corrupt: Option<(usize, usize, f64)>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            sizes: (6, 6),
            trials: 200,
            seed: 0,
            gammas: vec![0.01, 0.1, 1.0, 10.0],
            kinds: BaseDistanceKind::ALL.to_vec(),
            value_tol: 1e-9,
            grad_tol: 1e-4,
            cap: DEFAULT_PATH_CAP,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFailure {
    pub trial: usize,
    pub tau: usize,
    pub tau_prime: usize,
    pub gamma: f64,
    pub kind: BaseDistanceKind,
    pub what: String,
    pub error: f64,
    /// Alignment cell with the largest disagreement, when relevant.
    pub cell: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub trials: usize,
    pub passed: bool,
    pub max_value_error: f64,
    pub max_grad_error: f64,
    pub failures: Vec<OracleFailure>,
}

/// Relative error with a floor so values near zero compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn random_series(rng: &mut Xoshiro256PlusPlus, len: usize, dim: usize) -> TimeSeries {
    TimeSeries::new(dim, (0..len * dim).map(|_| rng.sample(StandardNormal)).collect()).expect("layout")
}

/// Runs the suite. Each trial draws sizes, a frame dimension of 1 or 2,
/// series, variances in `[0.5, 2]`, a `γ` and a kind.
pub fn run_oracle(cfg: &OracleConfig) -> Result<OracleReport> {
    if cfg.sizes.0 == 0 || cfg.sizes.1 == 0 {
        return Err(domain("oracle sizes must be >= 1"));
    }
    if cfg.gammas.is_empty() || cfg.kinds.is_empty() {
        return Err(domain("oracle needs at least one gamma and one kind"));
    }
    let biggest = PlanShape::new(cfg.sizes.0, cfg.sizes.1)?;
    let count = crate::alignment::count_paths(&biggest);
    if count > cfg.cap {
        return Err(crate::Error::Capacity {
            count,
            cap: cfg.cap,
            tau: cfg.sizes.0,
            tau_prime: cfg.sizes.1,
        });
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let mut report = OracleReport {
        trials: cfg.trials,
        passed: true,
        max_value_error: 0.0,
        max_grad_error: 0.0,
        failures: Vec::new(),
    };
    for trial in 0..cfg.trials {
        let t = rng.random_range(1..=cfg.sizes.0);
        let tp = rng.random_range(1..=cfg.sizes.1);
        let dim = rng.random_range(1..=2);
        let gamma = cfg.gammas[rng.random_range(0..cfg.gammas.len())];
        let kind = cfg.kinds[rng.random_range(0..cfg.kinds.len())];
        let a = random_series(&mut rng, t, dim);
        let b = random_series(&mut rng, tp, dim);
        let var = VarianceMatrix::new(Grid::from_fn(t, tp, |_, _| rng.random_range(0.5..2.0)))?;
        let fail = |what: &str, error: f64, cell| OracleFailure {
            trial,
            tau: t,
            tau_prime: tp,
            gamma,
            kind,
            what: what.to_string(),
            error,
            cell,
        };

        let shape = PlanShape::new(t, tp)?;
        let g = Gamma::new(gamma)?;
        let (cost, logs) = weighted_cost(&a, &b, &var, kind)?;
        let (_, mut table) = sdtw_forward(&cost, g, &shape)?;
        if let Some((m, n, v)) = cfg.corrupt {
            if m <= t && n <= tp {
                table.corrupt(m, n, v);
            }
        }
        let align = sdtw_backward(&cost, &table)?;
        let (dist, pen) = (align.dot(&cost), align.dot(&logs));
        let bf = brute_force_udtw(&cost, &logs, g, &shape, cfg.cap)?;
        let (mut worst, mut cell) = (0.0, (0, 0));
        for m in 0..t {
            for n in 0..tp {
                let e = (align[(m, n)] - bf.alignment[(m, n)]).abs();
                if !(e <= worst) {
                    worst = e;
                    cell = (m, n);
                }
            }
        }
        let errs = [
            ("distance", rel_err(dist, bf.distance)),
            ("penalty", rel_err(pen, bf.penalty)),
            ("alignment", worst),
        ];
        for (what, e) in errs {
            let e = if e.is_nan() { f64::INFINITY } else { e };
            report.max_value_error = report.max_value_error.max(e);
            if !(e <= cfg.value_tol) {
                report.failures.push(fail(what, e, (what == "alignment").then_some(cell)));
            }
        }

        let metric = UdtwConfig {
            gamma: g,
            kind,
            ..UdtwConfig::default()
        };
        let w = PenaltyWeights { beta: 0.5, lambda: 0.0 };
        let pg = surrogate_grad(&a, &b, &var, &metric, w)?;
        let value = |x: &TimeSeries| surrogate_grad(x, &b, &var, &metric, w).map(|r| r.value).unwrap_or(f64::NAN);
        let fd = finite_diff_gradient(|p| value(&TimeSeries::new(dim, p.to_vec()).expect("layout")), a.values(), 1e-6)?;
        let e = max_rel_error(&pg.d_psi, &fd);
        let e = if e.is_nan() { f64::INFINITY } else { e };
        report.max_grad_error = report.max_grad_error.max(e);
        if !(e <= cfg.grad_tol) {
            report.failures.push(fail("series gradient", e, None));
        }
    }
    report.passed = report.failures.is_empty();
    Ok(report)
}
