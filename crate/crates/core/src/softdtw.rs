//! Soft-DTW: the log-sum-exp relaxation of DTW computed by forward dynamic
//! programming, and the reverse recursion that yields the soft alignment
//! `E[Π]` (the Gibbs probability that a path visits each cell).
//!
//! Forward: `R(m,n) = D(m,n) + softmin_γ(R(m-1,n), R(m,n-1), R(m-1,n-1))` on
//! a table padded with a border row and column, `R(0,0) = 0`.
//!
//! Backward: `E(τ,τ') = 1` and every other cell collects from its successors
//! `E(c) = Σ_s E(s) · P(s ← c)`, where `P(s ← c)` is the softmin weight of
//! `R(c)` among the predecessors of `s`. The weights are computed from
//! differences of predecessor entries only, which keeps them exact as
//! `γ → 0`. `E` equals the derivative of the forward value w.r.t. `D`.

use std::ops::Deref;

use crate::alignment::{backtrack, Path, PlanShape};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::numerics::{softmin3, Gamma};

/// Stand-in for `+∞` in the padded DP table.
pub const UNREACHABLE: f64 = 1e300;

#[inline]
fn reachable(v: f64) -> bool {
    v < UNREACHABLE * 0.5
}

/// Forward DP state retained for the backward pass.
#[derive(Debug, Clone)]
pub struct DpTable {
    shape: PlanShape,
    gamma: Gamma,
    /// `(tau+1) x (tau_prime+1)`, row-major, border included.
    r: Vec<f64>,
}

impl DpTable {
    pub fn shape(&self) -> &PlanShape {
        &self.shape
    }

    pub fn gamma(&self) -> Gamma {
        self.gamma
    }

    /// Padded table entry `R(m, n)`, 1-based in the interior.
    #[inline]
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.r[m * (self.shape.tau_prime + 1) + n]
    }

    pub fn value(&self) -> f64 {
        self.get(self.shape.tau, self.shape.tau_prime)
    }

    /// Overwrites a padded entry. Exposed so oracle tooling can verify that a
    /// corrupted table is caught.
    #[doc(hidden)]
    pub fn corrupt(&mut self, m: usize, n: usize, value: f64) {
        let w = self.shape.tau_prime + 1;
        self.r[m * w + n] = value;
    }
}

/// Soft alignment `E[Π]`: entries in `[0, 1]`, corners equal to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAlignment(Grid);

impl SoftAlignment {
    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }
}

impl Deref for SoftAlignment {
    type Target = Grid;

    fn deref(&self) -> &Grid {
        &self.0
    }
}

/// Forward soft-DTW over an arbitrary finite grid. `γ = 0` is hard DTW.
pub fn sdtw_forward(grid: &Grid, gamma: Gamma, shape: &PlanShape) -> Result<(f64, DpTable)> {
    shape.check_grid(grid)?;
    if !grid.is_finite() {
        return Err(Error::Numeric("soft-DTW cost grid has non-finite entries".into()));
    }
    if gamma.value().is_infinite() {
        return Err(crate::error::domain("soft-DTW needs a finite gamma"));
    }
    let (t, tp) = (shape.tau, shape.tau_prime);
    let w = tp + 1;
    let mut r = vec![UNREACHABLE; (t + 1) * w];
    r[0] = 0.0;
    let g = gamma.value();
    for m in 1..=t {
        for n in 1..=tp {
            if !shape.admissible(m - 1, n - 1) {
                continue;
            }
            let diag = r[(m - 1) * w + n - 1];
            let up = r[(m - 1) * w + n];
            let left = r[m * w + n - 1];
            let lo = diag.min(up).min(left);
            if !reachable(lo) {
                continue;
            }
            let soft = if gamma.is_hard() {
                lo
            } else {
                softmin3(diag, up, left, g)
            };
            r[m * w + n] = grid[(m - 1, n - 1)] + soft;
        }
    }
    let value = r[t * w + tp];
    if !reachable(value) {
        return Err(Error::Infeasible {
            tau: t,
            tau_prime: tp,
        });
    }
    Ok((
        value,
        DpTable {
            shape: *shape,
            gamma,
            r,
        },
    ))
}

/// Reverse recursion: the soft alignment `E[Π] = ∂ sdtw / ∂ grid`.
///
/// With `γ = 0` the result is the indicator of the hard argmin path.
pub fn sdtw_backward(grid: &Grid, table: &DpTable) -> Result<SoftAlignment> {
    let shape = table.shape;
    shape.check_grid(grid)?;
    let (t, tp) = (shape.tau, shape.tau_prime);
    if table.gamma.is_hard() {
        return Ok(SoftAlignment(hard_path(table).indicator(t, tp)));
    }
    let g = table.gamma.value();
    let w = tp + 1;
    let r = &table.r;
    let mut e = vec![0.0; (t + 1) * w];
    e[t * w + tp] = 1.0;
    // reverse order finalises each cell before it hands its mass back to
    // its predecessors, split by their softmin weights
    for m in (1..=t).rev() {
        for n in (1..=tp).rev() {
            let es = e[m * w + n];
            if es == 0.0 || !reachable(r[m * w + n]) {
                continue;
            }
            let preds = [(m - 1) * w + n - 1, (m - 1) * w + n, m * w + n - 1];
            let lo = preds.iter().map(|&k| r[k]).fold(f64::INFINITY, f64::min);
            let mut p = [0.0; 3];
            for (pk, &k) in p.iter_mut().zip(&preds) {
                if reachable(r[k]) {
                    *pk = (-(r[k] - lo) / g).exp();
                }
            }
            let z: f64 = p.iter().sum();
            for (pk, &k) in p.iter().zip(&preds) {
                e[k] += es * pk / z;
            }
        }
    }
    let out = Grid::from_fn(t, tp, |i, j| e[(i + 1) * w + j + 1].min(1.0));
    let mut out = out;
    out[(0, 0)] = 1.0;
    out[(t - 1, tp - 1)] = 1.0;
    Ok(SoftAlignment(out))
}

/// The hard argmin path recorded by a `γ = 0` table.
pub fn hard_path(table: &DpTable) -> Path {
    let r: Vec<f64> = table
        .r
        .iter()
        .map(|&v| if reachable(v) { v } else { f64::INFINITY })
        .collect();
    backtrack(&r, table.shape.tau, table.shape.tau_prime)
}

/// Forward and backward in one call.
pub fn soft_alignment(grid: &Grid, gamma: Gamma, shape: &PlanShape) -> Result<(f64, SoftAlignment)> {
    let (value, table) = sdtw_forward(grid, gamma, shape)?;
    let a = sdtw_backward(grid, &table)?;
    Ok((value, a))
}
