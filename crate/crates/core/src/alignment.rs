//! Warping paths on a `tau x tau_prime` lattice: the admissible set (with an
//! optional Sakoe–Chiba band), exhaustive enumeration, and hard DTW.
//!
//! Cells are 0-based `(m, n)` pairs, `m` indexing the query and `n` the
//! support. Paths start at `(0, 0)`, end at `(tau-1, tau_prime-1)` and move by
//! one of the steps `(+1, 0)`, `(0, +1)` or `(+1, +1)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::Grid;

/// Default cap on the number of paths [`enumerate_paths`] will materialise.
pub const DEFAULT_PATH_CAP: u128 = 1_000_000;

/// A validated grid of pairwise base distances: entries finite and `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Grid);

impl CostMatrix {
    pub fn new(grid: Grid) -> Result<Self> {
        if let Some(v) = grid.as_slice().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(domain(format!("cost entries must be finite and >= 0, found {v}")));
        }
        Ok(Self(grid))
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

impl std::ops::Deref for CostMatrix {
    type Target = Grid;

    fn deref(&self) -> &Grid {
        &self.0
    }
}

/// Sakoe–Chiba half-width.
///
/// A cell `(m, n)` is admissible when its distance to the slope-corrected
/// diagonal `m (tau'-1)/(tau-1)` is at most the width: `r` itself for
/// [`Band::Absolute`], `r * tau'` for [`Band::Fraction`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "r", rename_all = "lowercase")]
pub enum Band {
    Absolute(f64),
    Fraction(f64),
}

impl Band {
    pub fn width(self, tau_prime: usize) -> f64 {
        match self {
            Band::Absolute(r) => r,
            Band::Fraction(r) => r * tau_prime as f64,
        }
    }

    pub fn radius(self) -> f64 {
        match self {
            Band::Absolute(r) | Band::Fraction(r) => r,
        }
    }
}

/// Dimensions of a transportation plan plus its optional band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanShape {
    pub tau: usize,
    pub tau_prime: usize,
    pub band: Option<Band>,
}

impl PlanShape {
    pub fn new(tau: usize, tau_prime: usize) -> Result<Self> {
        if tau == 0 || tau_prime == 0 {
            return Err(domain(format!(
                "plan dimensions must be >= 1, got {tau}x{tau_prime}"
            )));
        }
        Ok(Self {
            tau,
            tau_prime,
            band: None,
        })
    }

    pub fn with_band(mut self, band: Option<Band>) -> Result<Self> {
        if let Some(b) = band {
            let r = b.radius();
            if !(r >= 0.0) || !r.is_finite() {
                return Err(domain(format!("band width must be finite and >= 0, got {r}")));
            }
        }
        self.band = band;
        Ok(self)
    }

    /// Shape of a grid with no band.
    pub fn of(grid: &Grid) -> Result<Self> {
        Self::new(grid.rows(), grid.cols())
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.shape() != (self.tau, self.tau_prime) {
            return Err(domain(format!(
                "grid is {}x{} but plan is {}x{}",
                grid.rows(),
                grid.cols(),
                self.tau,
                self.tau_prime
            )));
        }
        Ok(())
    }

    /// Whether cell `(m, n)` lies inside the band. Single-row or single-column
    /// plans have exactly one path, so every cell is admissible there.
    #[inline]
    pub fn admissible(&self, m: usize, n: usize) -> bool {
        let Some(band) = self.band else {
            return true;
        };
        if self.tau == 1 || self.tau_prime == 1 {
            return true;
        }
        let centre = m as f64 * (self.tau_prime - 1) as f64 / (self.tau - 1) as f64;
        (centre - n as f64).abs() <= band.width(self.tau_prime) + 1e-12
    }

    /// Admissibility mask, row-major.
    pub fn mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.tau * self.tau_prime);
        for m in 0..self.tau {
            for n in 0..self.tau_prime {
                out.push(self.admissible(m, n));
            }
        }
        out
    }
}

/// One step of a warping path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    Diagonal,
    Right,
    Down,
}

impl Step {
    pub const ALL: [Step; 3] = [Step::Diagonal, Step::Right, Step::Down];

    #[inline]
    pub fn delta(self) -> (usize, usize) {
        match self {
            Step::Diagonal => (1, 1),
            Step::Right => (0, 1),
            Step::Down => (1, 0),
        }
    }
}

/// A monotone warping path as an ordered list of cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    cells: Vec<(usize, usize)>,
}

impl Path {
    /// Validates the endpoint and step invariants against `shape`.
    pub fn new(cells: Vec<(usize, usize)>, shape: &PlanShape) -> Result<Self> {
        let p = Self { cells };
        p.validate(shape)?;
        Ok(p)
    }

    pub(crate) fn from_cells_unchecked(cells: Vec<(usize, usize)>) -> Self {
        Self { cells }
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn validate(&self, shape: &PlanShape) -> Result<()> {
        let first = self.cells.first().ok_or_else(|| domain("empty path"))?;
        let last = self.cells.last().unwrap();
        if *first != (0, 0) || *last != (shape.tau - 1, shape.tau_prime - 1) {
            return Err(domain("path must run from the first to the last cell"));
        }
        for w in self.cells.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ok = b.0 >= a.0 && b.1 >= a.1 && b.0 - a.0 <= 1 && b.1 - a.1 <= 1 && b != a;
            if !ok {
                return Err(domain(format!("illegal step {a:?} -> {b:?}")));
            }
        }
        if let Some(&(m, n)) = self.cells.iter().find(|&&(m, n)| !shape.admissible(m, n)) {
            return Err(domain(format!("cell ({m}, {n}) lies outside the band")));
        }
        Ok(())
    }

    /// 0/1 indicator matrix of the path.
    pub fn indicator(&self, rows: usize, cols: usize) -> Grid {
        let mut g = Grid::zeros(rows, cols);
        for &(m, n) in &self.cells {
            g[(m, n)] = 1.0;
        }
        g
    }
}

/// Number of admissible paths ending at each cell, saturating.
fn path_counts(shape: &PlanShape) -> Vec<u128> {
    let (t, tp) = (shape.tau, shape.tau_prime);
    let mut c = vec![0u128; t * tp];
    for m in 0..t {
        for n in 0..tp {
            if !shape.admissible(m, n) {
                continue;
            }
            c[m * tp + n] = if m == 0 && n == 0 {
                1
            } else {
                let mut s = 0u128;
                if m > 0 {
                    s = s.saturating_add(c[(m - 1) * tp + n]);
                }
                if n > 0 {
                    s = s.saturating_add(c[m * tp + n - 1]);
                }
                if m > 0 && n > 0 {
                    s = s.saturating_add(c[(m - 1) * tp + n - 1]);
                }
                s
            };
        }
    }
    c
}

/// Number of admissible warping paths (saturating at `u128::MAX`).
pub fn count_paths(shape: &PlanShape) -> u128 {
    path_counts(shape)[shape.tau * shape.tau_prime - 1]
}

/// All admissible paths, in lexicographic order of their step sequences
/// (`Diagonal < Right < Down`). Fails when the count exceeds
/// [`DEFAULT_PATH_CAP`].
pub fn enumerate_paths(shape: &PlanShape) -> Result<Vec<Path>> {
    enumerate_paths_with_cap(shape, DEFAULT_PATH_CAP)
}

pub fn enumerate_paths_with_cap(shape: &PlanShape, cap: u128) -> Result<Vec<Path>> {
    let count = count_paths(shape);
    if count > cap {
        return Err(Error::Capacity {
            count,
            cap,
            tau: shape.tau,
            tau_prime: shape.tau_prime,
        });
    }
    if count == 0 {
        return Err(Error::Infeasible {
            tau: shape.tau,
            tau_prime: shape.tau_prime,
        });
    }
    let (t, tp) = (shape.tau, shape.tau_prime);
    // cells from which the end is reachable inside the band
    let mut alive = vec![false; t * tp];
    for m in (0..t).rev() {
        for n in (0..tp).rev() {
            if !shape.admissible(m, n) {
                continue;
            }
            alive[m * tp + n] = (m == t - 1 && n == tp - 1)
                || Step::ALL.iter().any(|s| {
                    let (dm, dn) = s.delta();
                    let (a, b) = (m + dm, n + dn);
                    a < t && b < tp && alive[a * tp + b]
                });
        }
    }

    let mut out = Vec::with_capacity(count as usize);
    let mut stack = vec![(0usize, 0usize)];
    fn walk(
        stack: &mut Vec<(usize, usize)>,
        alive: &[bool],
        t: usize,
        tp: usize,
        out: &mut Vec<Path>,
    ) {
        let (m, n) = *stack.last().unwrap();
        if m == t - 1 && n == tp - 1 {
            out.push(Path::from_cells_unchecked(stack.clone()));
            return;
        }
        for s in Step::ALL {
            let (dm, dn) = s.delta();
            let (a, b) = (m + dm, n + dn);
            if a < t && b < tp && alive[a * tp + b] {
                stack.push((a, b));
                walk(stack, alive, t, tp, out);
                stack.pop();
            }
        }
    }
    walk(&mut stack, &alive, t, tp, &mut out);
    Ok(out)
}

/// `<Π, grid>`: sum of the grid along the path.
pub fn path_cost(path: &Path, grid: &Grid) -> Result<f64> {
    let mut s = 0.0;
    for &(m, n) in path.cells() {
        if m >= grid.rows() || n >= grid.cols() {
            return Err(domain(format!(
                "path cell ({m}, {n}) outside a {}x{} grid",
                grid.rows(),
                grid.cols()
            )));
        }
        s += grid[(m, n)];
    }
    Ok(s)
}

/// Hard DTW by dynamic programming.
///
/// Returns the minimum path cost and one minimising path, recovered by
/// backtracking with ties resolved diagonal, then vertical, then horizontal.
pub fn dtw_hard(grid: &Grid, shape: &PlanShape) -> Result<(f64, Path)> {
    shape.check_grid(grid)?;
    let (t, tp) = (shape.tau, shape.tau_prime);
    let w = tp + 1;
    let mut r = vec![f64::INFINITY; (t + 1) * w];
    r[0] = 0.0;
    for m in 1..=t {
        for n in 1..=tp {
            if !shape.admissible(m - 1, n - 1) {
                continue;
            }
            let best = r[(m - 1) * w + n - 1]
                .min(r[(m - 1) * w + n])
                .min(r[m * w + n - 1]);
            if best.is_finite() {
                r[m * w + n] = grid[(m - 1, n - 1)] + best;
            }
        }
    }
    let value = r[t * w + tp];
    if !value.is_finite() {
        return Err(Error::Infeasible {
            tau: t,
            tau_prime: tp,
        });
    }
    let path = backtrack(&r, t, tp);
    Ok((value, path))
}

/// Recovers the argmin path from a padded `(t+1) x (tp+1)` accumulated-cost
/// table (hard minima). Ties prefer diagonal, then vertical, then horizontal.
pub(crate) fn backtrack(r: &[f64], t: usize, tp: usize) -> Path {
    let w = tp + 1;
    let mut cells = vec![(t - 1, tp - 1)];
    let (mut m, mut n) = (t, tp);
    while (m, n) != (1, 1) {
        let diag = r[(m - 1) * w + n - 1];
        let up = r[(m - 1) * w + n];
        let left = r[m * w + n - 1];
        if m > 1 && n > 1 && diag <= up && diag <= left {
            m -= 1;
            n -= 1;
        } else if m > 1 && (n == 1 || up <= left) {
            m -= 1;
        } else {
            n -= 1;
        }
        cells.push((m - 1, n - 1));
    }
    cells.reverse();
    Path::from_cells_unchecked(cells)
}
