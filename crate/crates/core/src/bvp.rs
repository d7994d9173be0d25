//! Uniform grids on `[-L, L]`, sampled profiles, and direct solvers for the
//! linear two-point problems `y'' - c y' - beta y = rhs` that every monotone
//! iteration sweep reduces to.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{reaction_monotone, ModelParams};

/// Pivots smaller than this abort a direct solve.
pub const PIVOT_TOL: f64 = 1e-14;

/// End values of a [`Profile`] may differ from its limits by at most this
/// much (relative to the jump between the limits). Waves are pinned at the
/// truncation ends with data taken from an upper solution, which carries an
/// exponentially small tail instead of the exact limit.
pub const END_TOL: f64 = 1e-6;

/// Distance to a limit below which monotonicity is not asserted.
pub const SATURATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(rename = "L")]
    pub half_width: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid half-width must be positive, got {half_width}"
            )));
        }
        if n < 3 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 3 interior points, got {n}"
            )));
        }
        Ok(Grid { half_width, n })
    }

    /// Smallest grid on `[-L, L]` with spacing at most `h_max`.
    pub fn with_max_spacing(half_width: f64, h_max: f64) -> Result<Self> {
        if !(h_max.is_finite() && h_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "spacing must be positive, got {h_max}"
            )));
        }
        let cells = (2.0 * half_width / h_max - 1e-9).ceil().max(4.0) as usize;
        Grid::new(half_width, cells - 1)
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / (self.n + 1) as f64
    }

    /// Number of nodes including both ends.
    pub fn len(&self) -> usize {
        self.n + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n + 1 {
            self.half_width
        } else {
            -self.half_width + i as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Cell index `i` and fraction `theta` with `xi = node(i) + theta h`,
    /// clamped to the domain.
    pub fn locate(&self, xi: f64) -> (usize, f64) {
        let s = (xi + self.half_width) / self.h();
        if s <= 0.0 {
            return (0, 0.0);
        }
        let last = self.n; // cells are 0..=n
        if s >= (last + 1) as f64 {
            return (last, 1.0);
        }
        let i = (s.floor() as usize).min(last);
        (i, s - i as f64)
    }
}

/// One scalar field sampled on a grid, together with its limits at `-inf`
/// and `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Profile {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub left_limit: f64,
    pub right_limit: f64,
}

impl Profile {
    pub fn new(grid: Grid, values: Vec<f64>, left_limit: f64, right_limit: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "profile has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite profile value at node {i}")));
        }
        let scale = (right_limit - left_limit).abs().max(1.0);
        let (a, b) = (values[0], values[grid.n + 1]);
        if (a - left_limit).abs() > END_TOL * scale || (b - right_limit).abs() > END_TOL * scale {
            return Err(Error::InvalidParameter(format!(
                "profile ends ({a}, {b}) are not within {END_TOL} of the limits ({left_limit}, {right_limit})"
            )));
        }
        Ok(Profile {
            grid,
            values,
            left_limit,
            right_limit,
        })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Profile {
            grid,
            values: vec![value; grid.len()],
            left_limit: value,
            right_limit: value,
        }
    }

    pub fn from_fn(grid: Grid, left_limit: f64, right_limit: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().into_iter().map(f).collect();
        Profile::new(grid, values, left_limit, right_limit)
    }

    /// Same samples with different recorded limits, bypassing the end check.
    pub(crate) fn raw(grid: Grid, values: Vec<f64>, left_limit: f64, right_limit: f64) -> Self {
        Profile {
            grid,
            values,
            left_limit,
            right_limit,
        }
    }

    /// Cubic Lagrange interpolation; the limits are returned outside `[-L, L]`.
    pub fn value_at(&self, xi: f64) -> f64 {
        let g = self.grid;
        if xi < -g.half_width {
            return self.left_limit;
        }
        if xi > g.half_width {
            return self.right_limit;
        }
        let (i, _) = g.locate(xi);
        let last = g.n + 1;
        let start = if i == 0 { 0 } else { (i - 1).min(last - 3) };
        let t = (xi - g.node(start)) / g.h();
        let y = &self.values[start..start + 4];
        // Lagrange basis on the nodes t = 0, 1, 2, 3.
        let l0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
        let l1 = t * (t - 2.0) * (t - 3.0) / 2.0;
        let l2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
        let l3 = t * (t - 1.0) * (t - 2.0) / 6.0;
        l0 * y[0] + l1 * y[1] + l2 * y[2] + l3 * y[3]
    }

    /// First position where the profile reaches `level`, located on the
    /// cubic interpolant.
    pub fn crossing(&self, level: f64) -> Option<f64> {
        let g = self.grid;
        let k = self
            .values
            .windows(2)
            .position(|w| (w[0] - level) * (w[1] - level) <= 0.0 && w[0] != w[1])?;
        let (mut a, mut b) = (g.node(k), g.node(k + 1));
        let fa = self.value_at(a) - level;
        if fa == 0.0 {
            return Some(a);
        }
        let increasing = self.values[k + 1] > self.values[k];
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let fm = self.value_at(m) - level;
            if (fm < 0.0) == increasing {
                a = m;
            } else {
                b = m;
            }
            if b - a < 1e-15 * (1.0 + a.abs()) {
                break;
            }
        }
        Some(0.5 * (a + b))
    }

    /// Minimum of `values[i+1] - values[i]` over the whole grid.
    pub fn min_forward_difference(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Every forward difference is positive, except between nodes that both
    /// lie within [`SATURATION_TOL`] (relative) of a limit, where the tail
    /// has sunk below the residual floor of the discrete solve.
    pub fn is_strictly_increasing(&self) -> bool {
        self.is_strictly_increasing_within(SATURATION_TOL)
    }

    pub fn is_strictly_increasing_within(&self, saturation: f64) -> bool {
        let scale = self.left_limit.abs().max(self.right_limit.abs()).max(1.0);
        let sat = saturation * scale;
        let near = |v: f64| (v - self.left_limit).abs() <= sat || (v - self.right_limit).abs() <= sat;
        self.values
            .windows(2)
            .all(|w| w[1] > w[0] || (near(w[0]) && near(w[1])))
    }

    /// Samples of `xi -> self(xi + k h)`, padded with the limits.
    pub fn shifted_nodes(&self, k: isize) -> Profile {
        let len = self.values.len() as isize;
        let values = (0..len)
            .map(|i| {
                let j = i + k;
                if j < 0 {
                    self.left_limit
                } else if j >= len {
                    self.right_limit
                } else {
                    self.values[j as usize]
                }
            })
            .collect();
        Profile::raw(self.grid, values, self.left_limit, self.right_limit)
    }

    pub fn sup_distance(&self, other: &Profile) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn write_csv(&self, path: &Path, column: &str) -> Result<()> {
        write_columns(path, &self.grid, &[column], &[self])
    }
}

/// Writes `xi` followed by one column per profile.
pub fn write_columns(path: &Path, grid: &Grid, names: &[&str], profiles: &[&Profile]) -> Result<()> {
    if profiles.iter().any(|p| p.grid != *grid) {
        return Err(Error::GridMismatch);
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "xi")?;
    for n in names {
        write!(out, ",{n}")?;
    }
    writeln!(out)?;
    for i in 0..grid.len() {
        write!(out, "{:.10}", grid.node(i))?;
        for p in profiles {
            write!(out, ",{:.16e}", p.values[i])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Rows of `A y = rhs` for the interior unknowns, multiplied through by `h^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSystem {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl TridiagonalSystem {
    /// `A x` for a candidate solution.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.sup[i] * x[i + 1];
                }
                s
            })
            .collect()
    }
}

fn check_dominance(grid: &Grid, c: f64, beta: f64) -> Result<(f64, f64)> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
    }
    let h = grid.h();
    let lhs = c.abs() * h / 2.0;
    let rhs = 1.0 + beta * h * h / 2.0;
    if lhs >= rhs {
        return Err(Error::Stability { lhs, rhs });
    }
    Ok((1.0 + c * h / 2.0, 1.0 - c * h / 2.0))
}

/// Discretizes `y'' - c y' - beta y = rhs(i)` at the interior nodes `i = 1..=n`
/// with Dirichlet values `bc = (y(-L), y(L))`.
pub fn assemble(
    grid: &Grid,
    c: f64,
    beta: f64,
    rhs_fn: impl Fn(usize) -> f64,
    bc: (f64, f64),
) -> Result<TridiagonalSystem> {
    let (lo, up) = check_dominance(grid, c, beta)?;
    let n = grid.n;
    let h2 = grid.h() * grid.h();
    let mut rhs: Vec<f64> = (1..=n).map(|i| h2 * rhs_fn(i)).collect();
    rhs[0] -= lo * bc.0;
    rhs[n - 1] -= up * bc.1;
    Ok(TridiagonalSystem {
        sub: vec![lo; n],
        diag: vec![-2.0 - beta * h2; n],
        sup: vec![up; n],
        rhs,
    })
}

/// Thomas elimination without pivoting.
pub fn solve(system: &TridiagonalSystem) -> Result<Vec<f64>> {
    let mut x = vec![0.0; system.diag.len()];
    thomas(
        &system.sub,
        &system.diag,
        &system.sup,
        &system.rhs,
        &mut x,
        &mut Vec::new(),
    )?;
    Ok(x)
}

pub(crate) fn thomas(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &[f64],
    x: &mut [f64],
    scratch: &mut Vec<f64>,
) -> Result<()> {
    let n = diag.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    let cp = scratch;
    let mut denom = diag[0];
    if denom.abs() < PIVOT_TOL {
        return Err(Error::SingularMatrix { row: 0, pivot: denom });
    }
    cp[0] = sup[0] / denom;
    x[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - sub[i] * cp[i - 1];
        if denom.abs() < PIVOT_TOL {
            return Err(Error::SingularMatrix { row: i, pivot: denom });
        }
        cp[i] = sup[i] / denom;
        x[i] = (rhs[i] - sub[i] * x[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        x[i] -= cp[i] * x[i + 1];
    }
    Ok(())
}

/// Reusable solver for the constant-coefficient operator `y'' - c y' - beta y`
/// on a fixed grid, used by the monotone iteration sweeps.
#[derive(Debug, Clone)]
pub(crate) struct ShiftedSolver {
    lo: f64,
    up: f64,
    h2: f64,
    // Forward-elimination factors depend only on the operator, so they are
    // computed once.
    cp: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl ShiftedSolver {
    pub(crate) fn new(grid: &Grid, c: f64, beta: f64) -> Result<Self> {
        let (lo, up) = check_dominance(grid, c, beta)?;
        let n = grid.n;
        let h2 = grid.h() * grid.h();
        let d = -2.0 - beta * h2;
        let mut cp = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        let mut denom = d;
        for i in 0..n {
            if i > 0 {
                denom = d - lo * cp[i - 1];
            }
            if denom.abs() < PIVOT_TOL {
                return Err(Error::SingularMatrix { row: i, pivot: denom });
            }
            inv_denom[i] = 1.0 / denom;
            cp[i] = up / denom;
        }
        Ok(ShiftedSolver {
            lo,
            up,
            h2,
            cp,
            inv_denom,
        })
    }

    /// Solves with right-hand side `rhs(i)` at interior node `i` and writes the
    /// full solution (ends included) into `y`.
    pub(crate) fn solve_into(&self, rhs: impl Fn(usize) -> f64, bc: (f64, f64), y: &mut [f64]) {
        let n = self.cp.len();
        y[0] = bc.0;
        y[n + 1] = bc.1;
        let mut prev = 0.0;
        for i in 0..n {
            let mut r = self.h2 * rhs(i + 1);
            if i == 0 {
                r -= self.lo * bc.0;
            }
            if i == n - 1 {
                r -= self.up * bc.1;
            }
            prev = (r - self.lo * prev) * self.inv_denom[i];
            y[i + 1] = prev;
        }
        for i in (0..n - 1).rev() {
            y[i + 1] -= self.cp[i] * y[i + 2];
        }
    }
}

/// `y''(i) - c y'(i)` by central differences at interior node `i`.
#[inline]
pub(crate) fn advective_second(y: &[f64], i: usize, h: f64, c: f64) -> f64 {
    (y[i - 1] - 2.0 * y[i] + y[i + 1]) / (h * h) - c * (y[i + 1] - y[i - 1]) / (2.0 * h)
}

/// Values of `D y'' - c y' + F(y)` at every node for each component (zero
/// at the two ends). `reaction` maps the state at a node to `F`.
pub(crate) fn operator_values(
    profiles: &[&Profile],
    c: f64,
    reaction: impl Fn(&[f64], &mut [f64]),
) -> Result<Vec<Vec<f64>>> {
    let grid = profiles[0].grid;
    if profiles.iter().any(|p| p.grid != grid) {
        return Err(Error::GridMismatch);
    }
    let m = profiles.len();
    let h = grid.h();
    let mut out = vec![vec![0.0; grid.len()]; m];
    let mut state = vec![0.0; m];
    let mut f = vec![0.0; m];
    for i in 1..=grid.n {
        for (k, p) in profiles.iter().enumerate() {
            state[k] = p.values[i];
        }
        reaction(&state, &mut f);
        for (k, p) in profiles.iter().enumerate() {
            out[k][i] = advective_second(&p.values, i, h, c) + f[k];
        }
    }
    Ok(out)
}

/// Per-component sup-norm of the discretized wave operator of the
/// cooperative three-species system.
pub fn residual(profiles: [&Profile; 3], p: &ModelParams, c: f64) -> Result<[f64; 3]> {
    let ops = operator_values(&profiles, c, |x, f| {
        f.copy_from_slice(&reaction_monotone(p, x[0], x[1], x[2]));
    })?;
    let mut out = [0.0; 3];
    for (k, o) in ops.iter().enumerate() {
        out[k] = o.iter().fold(0.0, |a: f64, v| a.max(v.abs()));
    }
    Ok(out)
}

/// Solves a block-tridiagonal system whose off-diagonal blocks are scalar
/// multiples of the identity: `lo x_{i-1} + B_i x_i + up x_{i+1} = d_i`.
/// `blocks` holds the `m x m` row-major diagonal blocks, `d` the stacked
/// right-hand sides; the solution overwrites `d`.
pub(crate) fn solve_block_tridiagonal(m: usize, lo: f64, up: f64, blocks: &mut [f64], d: &mut [f64]) -> Result<()> {
    let n = d.len() / m;
    let mm = m * m;
    // chat[i] = M_i^{-1} * up, stored as m x m blocks.
    let mut chat = vec![0.0; n * mm];
    let mut rhs_block = vec![0.0; m * (m + 1)];
    for i in 0..n {
        let bi = &mut blocks[i * mm..(i + 1) * mm];
        if i > 0 {
            let prev = &chat[(i - 1) * mm..i * mm];
            for k in 0..mm {
                bi[k] -= lo * prev[k];
            }
            let (dprev, dcur) = d.split_at_mut(i * m);
            for k in 0..m {
                dcur[k] -= lo * dprev[(i - 1) * m + k];
            }
        }
        // Solve M_i [X | y] = [up I | d_i].
        for r in 0..m {
            for col in 0..m {
                rhs_block[r * (m + 1) + col] = if r == col { up } else { 0.0 };
            }
            rhs_block[r * (m + 1) + m] = d[i * m + r];
        }
        dense_solve(m, bi, &mut rhs_block, m + 1, i)?;
        for r in 0..m {
            for col in 0..m {
                chat[i * mm + r * m + col] = rhs_block[r * (m + 1) + col];
            }
            d[i * m + r] = rhs_block[r * (m + 1) + m];
        }
    }
    for i in (0..n.saturating_sub(1)).rev() {
        for r in 0..m {
            let mut s = 0.0;
            for col in 0..m {
                s += chat[i * mm + r * m + col] * d[(i + 1) * m + col];
            }
            d[i * m + r] -= s;
        }
    }
    Ok(())
}

/// Gaussian elimination with partial pivoting on a small dense matrix `a`
/// (`m x m`, destroyed) against `cols` right-hand-side columns stored
/// row-major in `b`.
fn dense_solve(m: usize, a: &mut [f64], b: &mut [f64], cols: usize, row_tag: usize) -> Result<()> {
    for k in 0..m {
        let piv = (k..m)
            .max_by(|&x, &y| a[x * m + k].abs().total_cmp(&a[y * m + k].abs()))
            .unwrap();
        if a[piv * m + k].abs() < PIVOT_TOL {
            return Err(Error::SingularMatrix {
                row: row_tag * m + k,
                pivot: a[piv * m + k],
            });
        }
        if piv != k {
            for col in 0..m {
                a.swap(k * m + col, piv * m + col);
            }
            for col in 0..cols {
                b.swap(k * cols + col, piv * cols + col);
            }
        }
        for r in k + 1..m {
            let f = a[r * m + k] / a[k * m + k];
            if f != 0.0 {
                for col in k..m {
                    a[r * m + col] -= f * a[k * m + col];
                }
                for col in 0..cols {
                    b[r * cols + col] -= f * b[k * cols + col];
                }
            }
        }
    }
    for k in (0..m).rev() {
        for col in 0..cols {
            let mut s = b[k * cols + col];
            for j in k + 1..m {
                s -= a[k * m + j] * b[j * cols + col];
            }
            b[k * cols + col] = s / a[k * m + k];
        }
    }
    Ok(())
}
