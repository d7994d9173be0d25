//! Monotone KPP fronts `w'' - c w' + f(w) = 0`, `w(-inf) = 0`, `w(+inf) = b`,
//! normalized by `w(0) = b/2`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::asymptotics::{fit_tail, DecayFit, Side};
use crate::bvp::{advective_second, thomas, Grid, Profile, ShiftedSolver};
use crate::error::{Error, Result};
use crate::model::{slow_root, CRITICAL_TOL, SPEED_SLACK};

/// Target sup-norm residual of a converged front.
pub const KPP_RESIDUAL_TOL: f64 = 1e-8;

/// The KPP nonlinearities the upper/lower constructions use, plus a custom
/// escape hatch.
#[derive(Clone)]
pub enum KppNonlinearity {
    /// `(1 - a1) u (1 - u)`, `b = 1`.
    Logistic { a1: f64 },
    /// `(1 - a1) u (1 - l u / (1 - a1))`, `b = (1 - a1) / l`.
    Stretched { a1: f64, l: f64 },
    /// `(1 - a1) u (1 - (1 + l) u / (1 - a1))`, `b = (1 - a1) / (1 + l)`.
    Compressed { a1: f64, l: f64 },
    /// Any `f` with `f(0) = f(b) = 0` and `f > 0` on `(0, b)`; the closure
    /// returns `(f(u), f'(u))`.
    Custom {
        b: f64,
        f: Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>,
    },
}

impl fmt::Debug for KppNonlinearity {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KppNonlinearity::Logistic { a1 } => write!(fm, "Logistic {{ a1: {a1} }}"),
            KppNonlinearity::Stretched { a1, l } => write!(fm, "Stretched {{ a1: {a1}, l: {l} }}"),
            KppNonlinearity::Compressed { a1, l } => write!(fm, "Compressed {{ a1: {a1}, l: {l} }}"),
            KppNonlinearity::Custom { b, .. } => write!(fm, "Custom {{ b: {b} }}"),
        }
    }
}

impl KppNonlinearity {
    /// Right equilibrium `b`.
    pub fn b(&self) -> f64 {
        match *self {
            KppNonlinearity::Logistic { .. } => 1.0,
            KppNonlinearity::Stretched { a1, l } => (1.0 - a1) / l,
            KppNonlinearity::Compressed { a1, l } => (1.0 - a1) / (1.0 + l),
            KppNonlinearity::Custom { b, .. } => b,
        }
    }

    /// `(f(u), f'(u))`.
    pub fn eval(&self, u: f64) -> (f64, f64) {
        match self {
            KppNonlinearity::Custom { f, .. } => f(u),
            _ => {
                // All three families are (1 - a1) u (1 - u / b).
                let a = self.abar();
                let b = self.b();
                (a * u * (1.0 - u / b), a * (1.0 - 2.0 * u / b))
            }
        }
    }

    /// `f'(0)`.
    pub fn abar(&self) -> f64 {
        match *self {
            KppNonlinearity::Logistic { a1 }
            | KppNonlinearity::Stretched { a1, .. }
            | KppNonlinearity::Compressed { a1, .. } => 1.0 - a1,
            KppNonlinearity::Custom { .. } => self.eval(0.0).1,
        }
    }

    /// `b1 = -f'(b)`.
    pub fn b1(&self) -> f64 {
        -self.eval(self.b()).1
    }

    pub fn label(&self) -> &'static str {
        match self {
            KppNonlinearity::Logistic { .. } => "logistic",
            KppNonlinearity::Stretched { .. } => "stretched",
            KppNonlinearity::Compressed { .. } => "compressed",
            KppNonlinearity::Custom { .. } => "custom",
        }
    }
}

#[derive(Debug, Clone)]
pub struct KppProblem {
    pub f: KppNonlinearity,
    pub c: f64,
}

impl KppProblem {
    pub fn new(f: KppNonlinearity, c: f64) -> Self {
        KppProblem { f, c }
    }

    pub fn c_min(&self) -> f64 {
        2.0 * self.f.abar().sqrt()
    }

    /// Checks the KPP structure: `f(0) = f(b) = 0`, `f > 0` inside,
    /// `f'(0) > 0 > f'(b)`, and `c >= 2 sqrt(f'(0))`.
    pub fn validate(&self) -> Result<()> {
        match self.f {
            KppNonlinearity::Logistic { a1 } => check_a1(a1)?,
            KppNonlinearity::Stretched { a1, l } | KppNonlinearity::Compressed { a1, l } => {
                check_a1(a1)?;
                if !(l.is_finite() && l > 0.0) && !matches!(self.f, KppNonlinearity::Compressed { .. } if l == 0.0) {
                    return Err(Error::InvalidParameter(format!("l must be positive, got {l}")));
                }
            }
            KppNonlinearity::Custom { b, .. } => {
                if !(b.is_finite() && b > 0.0) {
                    return Err(Error::InvalidParameter(format!("b must be positive, got {b}")));
                }
            }
        }
        let b = self.f.b();
        let (f0, _) = self.f.eval(0.0);
        let (fb, _) = self.f.eval(b);
        if f0.abs() > 1e-12 || fb.abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "nonlinearity must vanish at 0 and b: f(0) = {f0}, f(b) = {fb}"
            )));
        }
        if (1..100).any(|k| self.f.eval(b * k as f64 / 100.0).0 <= 0.0) {
            return Err(Error::InvalidParameter(
                "nonlinearity must be positive on (0, b)".into(),
            ));
        }
        if !(self.f.abar() > 0.0 && self.f.b1() > 0.0) {
            return Err(Error::InvalidParameter("need f'(0) > 0 > f'(b)".into()));
        }
        if !self.c.is_finite() {
            return Err(Error::InvalidParameter(format!("speed must be finite, got {}", self.c)));
        }
        if self.c < self.c_min() - SPEED_SLACK {
            return Err(Error::NoMonotoneWave {
                c: self.c,
                c_min: self.c_min(),
            });
        }
        Ok(())
    }
}

fn check_a1(a1: f64) -> Result<()> {
    if !(0.0..1.0).contains(&a1) {
        return Err(Error::InvalidParameter(format!("a1 must lie in [0, 1), got {a1}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KppOptions {
    pub max_newton: usize,
    /// Newton stops once the sup-norm residual is below this.
    pub tol: f64,
    /// Skip Newton and go straight to monotone sweeps (for testing the
    /// fallback path).
    pub force_picard: bool,
    pub max_picard: usize,
}

impl Default for KppOptions {
    fn default() -> Self {
        KppOptions {
            max_newton: 60,
            tol: 1e-11,
            force_picard: false,
            max_picard: 200_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KppWave {
    pub profile: Profile,
    pub c: f64,
    pub critical: bool,
    /// Fitted `-inf` tail, `None` if the window was too short.
    pub decay_minus: Option<DecayFit>,
    pub decay_plus: Option<DecayFit>,
    pub residual: f64,
    pub newton_steps: usize,
    pub picard_sweeps: usize,
}

impl KppWave {
    pub fn b(&self) -> f64 {
        self.profile.right_limit
    }
}

pub fn solve_kpp(problem: &KppProblem, grid: &Grid) -> Result<KppWave> {
    solve_kpp_with(problem, grid, &KppOptions::default())
}

/// Damped Newton on the discretized front equation. The unknowns are the
/// values at nodes `0..=n` (the left end is free, the right end is pinned to
/// `b`), closed by the phase condition that the linear interpolant equals
/// `b/2` at `xi = 0`.
pub fn solve_kpp_with(problem: &KppProblem, grid: &Grid, opts: &KppOptions) -> Result<KppWave> {
    problem.validate()?;
    let f = &problem.f;
    let c = problem.c;
    let b = f.b();
    let abar = f.abar();
    let lambda = slow_root(c, abar).ok_or(Error::NoMonotoneWave {
        c,
        c_min: problem.c_min(),
    })?;
    if (-lambda * grid.half_width).exp() > 1e-10 {
        return Err(Error::InvalidParameter(format!(
            "domain too short: exp(-lambda L) = {:e} > 1e-10 with lambda = {lambda}, L = {}",
            (-lambda * grid.half_width).exp(),
            grid.half_width
        )));
    }
    let h = grid.h();
    if c.abs() * h / 2.0 >= 1.0 {
        return Err(Error::Stability {
            lhs: c.abs() * h / 2.0,
            rhs: 1.0,
        });
    }
    let mut y: Vec<f64> = grid.nodes().iter().map(|&x| b / (1.0 + (-lambda * x).exp())).collect();
    y[grid.n + 1] = b;
    let mut picard_sweeps = 0;
    let mut newton_steps = 0;
    let mut converged = false;
    if !opts.force_picard {
        match newton(f, c, grid, &mut y, opts) {
            Ok(steps) => {
                newton_steps = steps;
                converged = true;
            }
            Err(steps) => newton_steps = steps,
        }
    }
    if !converged {
        // Monotone sweeps from the constant upper solution b, pinned on the
        // left by the initial guess, then Newton again from the result.
        let left = b / (1.0 + (lambda * grid.half_width).exp());
        picard_sweeps = kpp_picard(f, c, grid, left, &mut y, opts.max_picard)?;
        recenter(grid, lambda, b, &mut y);
        let steps = newton(f, c, grid, &mut y, opts).map_err(|steps| Error::ConvergenceFailure {
            iterations: newton_steps + steps,
            residual: kpp_residual(f, c, grid, &y),
        })?;
        newton_steps += steps;
    }
    let residual = kpp_residual(f, c, grid, &y);
    if residual > KPP_RESIDUAL_TOL {
        return Err(Error::ConvergenceFailure {
            iterations: newton_steps,
            residual,
        });
    }
    let profile = Profile::new(*grid, y, 0.0, b)?;
    let critical = (c - problem.c_min()).abs() < CRITICAL_TOL;
    if !profile.is_strictly_increasing() {
        return Err(Error::ConvergenceFailure {
            iterations: newton_steps,
            residual,
        });
    }
    Ok(KppWave {
        decay_minus: fit_tail(&profile, Side::Minus, critical).ok(),
        decay_plus: fit_tail(&profile, Side::Plus, false).ok(),
        profile,
        c,
        critical,
        residual,
        newton_steps,
        picard_sweeps,
    })
}

/// Sup-norm of `y'' - c y' + f(y)` over the interior nodes.
pub fn kpp_residual(f: &KppNonlinearity, c: f64, grid: &Grid, y: &[f64]) -> f64 {
    let h = grid.h();
    (1..=grid.n)
        .map(|i| (advective_second(y, i, h, c) + f.eval(y[i]).0).abs())
        .fold(0.0, f64::max)
}

/// Returns the number of steps on success, or on failure (bracket lost or no
/// convergence) the number of steps taken.
fn newton(
    f: &KppNonlinearity,
    c: f64,
    grid: &Grid,
    y: &mut [f64],
    opts: &KppOptions,
) -> std::result::Result<usize, usize> {
    let n = grid.n;
    let h = grid.h();
    let h2 = h * h;
    let (lo, up) = (1.0 + c * h / 2.0, 1.0 - c * h / 2.0);
    let b = f.b();
    let (i0, theta) = grid.locate(0.0);
    let mut sub = vec![lo; n];
    let mut sup = vec![up; n];
    sub[0] = 0.0;
    sup[n - 1] = 0.0;
    let mut diag = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut xa = vec![0.0; n];
    let mut xb = vec![0.0; n];
    let mut eb = vec![0.0; n];
    eb[0] = -lo;
    let mut scratch = Vec::new();
    let mut trial = y.to_vec();
    let phase_of = |y: &[f64]| (1.0 - theta) * y[i0] + theta * y[i0 + 1] - b / 2.0;
    let mut res = kpp_residual(f, c, grid, y);
    for step in 0..opts.max_newton {
        if res < opts.tol && phase_of(y).abs() < 1e-13 * b {
            return Ok(step);
        }
        for i in 1..=n {
            let (fv, df) = f.eval(y[i]);
            g[i - 1] = -(lo * y[i - 1] - 2.0 * y[i] + up * y[i + 1] + h2 * fv);
            diag[i - 1] = -2.0 + h2 * df;
        }
        if thomas(&sub, &diag, &sup, &g, &mut xa, &mut scratch).is_err()
            || thomas(&sub, &diag, &sup, &eb, &mut xb, &mut scratch).is_err()
        {
            return Err(step);
        }
        // Interior correction is xa + d0 * xb; d0 is fixed by the phase row.
        let at = |v: &[f64], d0: f64, k: usize| if k == 0 { d0 } else { v[k - 1] };
        let phase = phase_of(y);
        let pa = (1.0 - theta) * at(&xa, 0.0, i0) + theta * at(&xa, 0.0, i0 + 1);
        let pb = (1.0 - theta) * at(&xb, 1.0, i0) + theta * at(&xb, 1.0, i0 + 1);
        if pb == 0.0 || !pb.is_finite() {
            return Err(step);
        }
        let d0 = (-phase - pa) / pb;
        let mut alpha = 1.0;
        loop {
            trial[0] = y[0] + alpha * d0;
            for i in 1..=n {
                trial[i] = y[i] + alpha * (xa[i - 1] + d0 * xb[i - 1]);
            }
            let inside = trial[..=n].iter().all(|v| *v > 0.0 && *v < b * (1.0 + 1e-9));
            if inside {
                let r = kpp_residual(f, c, grid, &trial);
                if r.is_finite() && (r < res || alpha < 1.0 / 64.0) {
                    y.copy_from_slice(&trial);
                    res = r;
                    break;
                }
            }
            alpha /= 2.0;
            if alpha < 1.0 / 1024.0 {
                return Err(step);
            }
        }
    }
    if res < opts.tol.max(KPP_RESIDUAL_TOL) {
        Ok(opts.max_newton)
    } else {
        Err(opts.max_newton)
    }
}

/// Monotone sweeps `y'' - c y' - beta y = -f(y) - beta y` from `y = b`,
/// with `y(-L) = left`, `y(L) = b`.
fn kpp_picard(f: &KppNonlinearity, c: f64, grid: &Grid, left: f64, y: &mut [f64], max_sweeps: usize) -> Result<usize> {
    let b = f.b();
    let beta = 1.2
        * (0..=64)
            .map(|k| f.eval(b * k as f64 / 64.0).1.abs())
            .fold(0.0, f64::max)
        + 1.0;
    let solver = ShiftedSolver::new(grid, c, beta)?;
    y.iter_mut().for_each(|v| *v = b);
    y[0] = left;
    let mut next = y.to_vec();
    for sweep in 1..=max_sweeps {
        solver.solve_into(|i| -f.eval(y[i]).0 - beta * y[i], (left, b), &mut next);
        let diff = next
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        y.copy_from_slice(&next);
        if diff < 1e-12 {
            return Ok(sweep);
        }
    }
    Ok(max_sweeps)
}

/// Translates `y` so that it crosses `b/2` at the origin, extending the left
/// tail exponentially with rate `lambda`.
fn recenter(grid: &Grid, lambda: f64, b: f64, y: &mut [f64]) {
    let prof = Profile::raw(*grid, y.to_vec(), 0.0, b);
    let Some(s) = prof.crossing(b / 2.0) else { return };
    let l = grid.half_width;
    for (i, v) in y.iter_mut().enumerate() {
        let t = grid.node(i) + s;
        *v = if t < -l {
            prof.values[0] * (lambda * (t + l)).exp()
        } else {
            prof.value_at(t)
        };
    }
    y[grid.n + 1] = b;
}

/// `+inf` tail fit of a converged front.
pub fn kpp_plus_decay(wave: &KppWave) -> Result<DecayFit> {
    fit_tail(&wave.profile, Side::Plus, false)
}

/// `(c - sqrt(c^2 + 4 b1)) / 2`, the predicted `+inf` exponent.
pub fn kpp_plus_rate(problem: &KppProblem) -> f64 {
    crate::model::negative_root(problem.c, problem.f.b1())
}

/// `(c - sqrt(c^2 - 4 abar)) / 2`, the predicted `-inf` exponent.
pub fn kpp_minus_rate(problem: &KppProblem) -> Option<f64> {
    slow_root(problem.c, problem.f.abar())
}
