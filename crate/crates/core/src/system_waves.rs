//! Upper/lower solution pairs for the cooperative two- and three-species
//! wave systems, and the monotone iteration that squeezes a wave between them.

use serde::Serialize;

use crate::asymptotics::{fit_tail, DecayFit, Side};
use crate::bvp::{operator_values, solve_block_tridiagonal, Grid, Profile, ShiftedSolver};
use crate::error::{Bound, Error, Result};
use crate::model::{
    classify_regime, jacobian_lv2, jacobian_monotone, rates, reaction_lv2, reaction_monotone, ModelParams, Regime,
    RegimeVariant,
};
use crate::scalar_waves::{solve_kpp, KppNonlinearity, KppProblem};

/// Slack on the discretized upper/lower inequalities.
pub const VERIFY_SLACK: f64 = 1e-8;
/// Slack on the per-sweep `lower <= iterate <= upper` check.
pub const SANDWICH_SLACK: f64 = 1e-10;
/// Per-component sup-norm residual a converged wave must reach.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// The Newton polish stops once the residual is below this.
const POLISH_TARGET: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    /// `(u, v)` Lotka-Volterra system, `v` standing for both `v` and `w`.
    Two,
    Three,
}

impl SystemKind {
    pub fn dim(self) -> usize {
        match self {
            SystemKind::Two => 2,
            SystemKind::Three => 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct System {
    kind: SystemKind,
    p: ModelParams,
}

impl System {
    fn reaction_k(&self, k: usize, y: &[f64; 3]) -> f64 {
        match self.kind {
            SystemKind::Two => reaction_lv2(&self.p, y[0], y[1])[k],
            SystemKind::Three => reaction_monotone(&self.p, y[0], y[1], y[2])[k],
        }
    }

    fn reaction(&self, y: &[f64], out: &mut [f64]) {
        match self.kind {
            SystemKind::Two => out.copy_from_slice(&reaction_lv2(&self.p, y[0], y[1])),
            SystemKind::Three => out.copy_from_slice(&reaction_monotone(&self.p, y[0], y[1], y[2])),
        }
    }

    /// `out[i] = -f_k(Y_i) - beta y_k(i)` at the interior nodes.
    fn fill_rhs(&self, k: usize, y: &[Vec<f64>], beta: f64, out: &mut [f64]) {
        let p = &self.p;
        let n = out.len() - 1;
        let yk = &y[k];
        match (self.kind, k) {
            (SystemKind::Two, 0) | (SystemKind::Three, 0) => {
                let (u, w) = (&y[0], &y[y.len() - 1]);
                for i in 1..n {
                    out[i] = -u[i] * (1.0 - p.a1 - u[i] + p.a1 * w[i]) - beta * yk[i];
                }
            }
            (_, 1) => {
                let (u, v) = (&y[0], &y[1]);
                for i in 1..n {
                    out[i] = -p.r * (1.0 - v[i]) * (p.a2 * u[i] - v[i]) - beta * yk[i];
                }
            }
            _ => {
                let (v, w) = (&y[1], &y[2]);
                for i in 1..n {
                    out[i] = -(v[i] - w[i]) / p.tau - beta * yk[i];
                }
            }
        }
    }

    /// Row-major Jacobian into `out` (`m * m`).
    fn jacobian(&self, y: &[f64; 3], out: &mut [f64]) {
        match self.kind {
            SystemKind::Two => {
                let j = jacobian_lv2(&self.p, y[0], y[1]);
                for r in 0..2 {
                    out[r * 2..r * 2 + 2].copy_from_slice(&j[r]);
                }
            }
            SystemKind::Three => {
                let j = jacobian_monotone(&self.p, y[0], y[1], y[2]);
                for r in 0..3 {
                    out[r * 3..r * 3 + 3].copy_from_slice(&j[r]);
                }
            }
        }
    }

    /// `max_i |df_i/du_i|` over a `9^m` lattice of the unit box.
    fn diagonal_sup(&self) -> f64 {
        let m = self.kind.dim();
        let pts = 9usize.pow(m as u32);
        let mut jac = [0.0; 9];
        let mut best = 0.0f64;
        for idx in 0..pts {
            let mut y = [0.0; 3];
            let mut rest = idx;
            for slot in y.iter_mut().take(m) {
                *slot = (rest % 9) as f64 / 8.0;
                rest /= 9;
            }
            self.jacobian(&y, &mut jac);
            for k in 0..m {
                best = best.max(jac[k * m + k].abs());
            }
        }
        best
    }
}

/// Default monotone shift: `1 + 1.2 max |df_i/du_i|` sampled on the unit box.
pub fn default_beta(kind: SystemKind, p: &ModelParams) -> f64 {
    1.0 + 1.2 * System { kind, p: *p }.diagonal_sup()
}

/// Grid wide enough for the tail fits on both sides: `L` is at least
/// `25 / lambda_minus` and `22 / |slowest +inf rate|`, rounded up to a
/// multiple of 10.
pub fn wave_grid(p: &ModelParams, c: f64, h_max: f64) -> Result<Grid> {
    let table = rates(p, c)?;
    let lambda = table.require_real()?;
    let slow = table.slowest_plus().abs();
    let l = (25.0 / lambda).max(22.0 / slow).max(40.0);
    Grid::with_max_spacing((l / 10.0).ceil() * 10.0, h_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    GaussSeidel,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationConfig {
    /// `None` picks [`default_beta`].
    pub beta: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
    pub sweep_order: SweepOrder,
    pub start: Start,
    pub polish_steps: usize,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            beta: None,
            tol: 1e-10,
            max_iters: 200_000,
            sweep_order: SweepOrder::GaussSeidel,
            start: Start::Upper,
            polish_steps: 5,
        }
    }
}

impl IterationConfig {
    fn validate(&self, sys: &System) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if let Some(b) = self.beta {
            let need = sys.diagonal_sup();
            if !(b.is_finite() && b >= need) {
                return Err(Error::InvalidParameter(format!(
                    "beta = {b} is below the diagonal bound {need}"
                )));
            }
        }
        Ok(())
    }
}

/// Overrides for the free constants of the constructions. `None` picks the
/// midpoint of the admissible range (for `lv2_l`, the upper bound).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PairOptions {
    pub l: Option<f64>,
    pub l_bar: Option<f64>,
    pub lv2_l: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairReport {
    /// Per component, max over interior nodes of the operator on the upper
    /// solution and the node where it occurs.
    pub upper_max: Vec<f64>,
    pub upper_argmax: Vec<usize>,
    pub lower_min: Vec<f64>,
    pub lower_argmin: Vec<usize>,
    pub upper_ok: Vec<bool>,
    pub lower_ok: Vec<bool>,
    /// Limits: upper `>= 0` at `-inf` and `>= 1` at `+inf`, lower `<= 0` and `<= 1`.
    pub boundary_ok: bool,
    /// Smallest `upper - lower` over all nodes and components.
    pub order_gap: f64,
}

impl PairReport {
    pub fn ordered(&self) -> bool {
        self.order_gap >= 0.0
    }

    pub fn all_ok(&self) -> bool {
        self.upper_ok.iter().chain(&self.lower_ok).all(|b| *b) && self.boundary_ok
    }

    /// The first failed inequality as an error.
    pub fn failure(&self) -> Option<Error> {
        for k in 0..self.upper_ok.len() {
            if !self.upper_ok[k] {
                return Some(Error::Verification {
                    bound: Bound::Upper,
                    component: k,
                    node: self.upper_argmax[k],
                    value: self.upper_max[k],
                });
            }
            if !self.lower_ok[k] {
                return Some(Error::Verification {
                    bound: Bound::Lower,
                    component: k,
                    node: self.lower_argmin[k],
                    value: self.lower_min[k],
                });
            }
        }
        if !self.boundary_ok {
            return Some(Error::PreconditionFailure(
                "upper/lower limits are not ordered against the equilibria".into(),
            ));
        }
        None
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundingPair {
    pub kind: SystemKind,
    pub upper: Vec<Profile>,
    pub lower: Vec<Profile>,
    /// `eta` with the upper solution used as `upper(xi + eta)`.
    pub shift_applied: f64,
    pub l: f64,
    pub l_bar: Option<f64>,
    pub verified_upper: Vec<bool>,
    pub verified_lower: Vec<bool>,
    /// `min(a2 u - v)` on the two-species wave (three-species H2b only).
    pub h3_min: Option<f64>,
}

impl BoundingPair {
    fn new(kind: SystemKind, upper: Vec<Profile>, lower: Vec<Profile>, l: f64, l_bar: Option<f64>) -> Self {
        let m = kind.dim();
        BoundingPair {
            kind,
            upper,
            lower,
            shift_applied: 0.0,
            l,
            l_bar,
            verified_upper: vec![false; m],
            verified_lower: vec![false; m],
            h3_min: None,
        }
    }

    fn check(&mut self, p: &ModelParams, c: f64) -> Result<PairReport> {
        let report = verify_pair(self, p, c)?;
        self.verified_upper = report.upper_ok.clone();
        self.verified_lower = report.lower_ok.clone();
        if let Some(e) = report.failure() {
            return Err(e);
        }
        Ok(report)
    }
}

/// Discretized upper/lower inequalities for arbitrary profile tuples.
pub fn verify_bounds(
    kind: SystemKind,
    upper: &[Profile],
    lower: &[Profile],
    p: &ModelParams,
    c: f64,
) -> Result<PairReport> {
    let m = kind.dim();
    if upper.len() != m || lower.len() != m {
        return Err(Error::InvalidParameter(format!("expected {m} components")));
    }
    let sys = System { kind, p: *p };
    let up: Vec<&Profile> = upper.iter().collect();
    let lo: Vec<&Profile> = lower.iter().collect();
    if lower[0].grid != upper[0].grid {
        return Err(Error::GridMismatch);
    }
    let up_ops = operator_values(&up, c, |y, f| sys.reaction(y, f))?;
    let lo_ops = operator_values(&lo, c, |y, f| sys.reaction(y, f))?;
    let n = upper[0].grid.n;
    let mut r = PairReport {
        upper_max: vec![f64::NEG_INFINITY; m],
        upper_argmax: vec![0; m],
        lower_min: vec![f64::INFINITY; m],
        lower_argmin: vec![0; m],
        upper_ok: vec![false; m],
        lower_ok: vec![false; m],
        boundary_ok: true,
        order_gap: f64::INFINITY,
    };
    for k in 0..m {
        for i in 1..=n {
            if up_ops[k][i] > r.upper_max[k] {
                r.upper_max[k] = up_ops[k][i];
                r.upper_argmax[k] = i;
            }
            if lo_ops[k][i] < r.lower_min[k] {
                r.lower_min[k] = lo_ops[k][i];
                r.lower_argmin[k] = i;
            }
        }
        r.upper_ok[k] = r.upper_max[k] <= VERIFY_SLACK;
        r.lower_ok[k] = r.lower_min[k] >= -VERIFY_SLACK;
        r.boundary_ok &= upper[k].left_limit >= 0.0
            && upper[k].right_limit >= 1.0 - 1e-12
            && lower[k].left_limit <= 0.0
            && lower[k].right_limit <= 1.0 + 1e-12;
        for (a, b) in upper[k].values.iter().zip(&lower[k].values) {
            r.order_gap = r.order_gap.min(a - b);
        }
    }
    Ok(r)
}

pub fn verify_pair(pair: &BoundingPair, p: &ModelParams, c: f64) -> Result<PairReport> {
    verify_bounds(pair.kind, &pair.upper, &pair.lower, p, c)
}

fn scaled(profile: &Profile, k: f64, cap: f64) -> Result<Profile> {
    let values = profile.values.iter().map(|v| (k * v).min(cap)).collect();
    Profile::new(
        profile.grid,
        values,
        (k * profile.left_limit).min(cap),
        (k * profile.right_limit).min(cap),
    )
}

fn base_front(p: &ModelParams, c: f64, grid: &Grid) -> Result<Profile> {
    rates(p, c)?.require_real()?;
    let wave = solve_kpp(&KppProblem::new(KppNonlinearity::Logistic { a1: p.a1 }, c), grid)?;
    Ok(wave.profile)
}

fn require_variant(p: &ModelParams, want: RegimeVariant) -> Result<Regime> {
    p.validate()?;
    let regime = classify_regime(p);
    if regime.variant != want {
        return Err(Error::Regime(format!(
            "parameters a1={}, a2={}, r={} are in regime {:?}, not {:?}",
            p.a1, p.a2, p.r, regime.variant, want
        )));
    }
    Ok(regime)
}

/// Largest admissible `l` of the two-species upper solution.
pub fn lv2_l_bound(p: &ModelParams) -> f64 {
    (1.0 - p.a1 - p.r * (p.a1 * p.a2 - 1.0)) / (1.0 + p.r - p.a1)
}

/// Exclusive upper end of the admissible `l` for the three-species lower
/// solution; `cap_at_one` applies the extra `l < 1` needed in regime H2b.
pub fn lower_l_sup(p: &ModelParams, cap_at_one: bool) -> f64 {
    let s = p.r * p.a2 / (1.0 - p.a1 + p.r);
    if cap_at_one {
        s.min(1.0)
    } else {
        s
    }
}

/// Largest admissible `l_bar` for a given `l`.
pub fn l_bar_bound(p: &ModelParams, l: f64) -> f64 {
    l / ((1.0 - p.a1) * p.tau + 1.0)
}

/// Two-species pair: lower `(u, u)` from the logistic front, upper
/// `(min(u_hat, 1), min((1 - l)/a1 u_hat, 1))` with `u_hat = ((1 - a1)/l) u`.
pub fn build_pair_lv2(p: &ModelParams, c: f64, grid: &Grid, opts: &PairOptions) -> Result<BoundingPair> {
    require_variant(p, RegimeVariant::H2b)?;
    let bound = lv2_l_bound(p);
    if bound <= 0.0 {
        return Err(Error::Regime(format!(
            "admissible l range is empty: bound {bound} <= 0"
        )));
    }
    let l = opts.lv2_l.unwrap_or(bound);
    if !(l > 0.0 && l <= bound) {
        return Err(Error::InvalidParameter(format!("l = {l} outside (0, {bound}]")));
    }
    let base = base_front(p, c, grid)?;
    let k = (1.0 - p.a1) / l;
    let upper = vec![scaled(&base, k, 1.0)?, scaled(&base, k * (1.0 - l) / p.a1, 1.0)?];
    let lower = vec![base.clone(), base];
    let mut pair = BoundingPair::new(SystemKind::Two, upper, lower, l, None);
    pair.check(p, c)?;
    Ok(pair)
}

fn lower_triple(p: &ModelParams, base: &Profile, l: f64, l_bar: f64) -> Result<Vec<Profile>> {
    let k = (1.0 - p.a1) / (1.0 + l);
    Ok(vec![
        scaled(base, k, f64::INFINITY)?,
        scaled(base, l * k, f64::INFINITY)?,
        scaled(base, l_bar * k, f64::INFINITY)?,
    ])
}

fn lower_constants(p: &ModelParams, opts: &PairOptions, cap_at_one: bool) -> Result<(f64, f64)> {
    let sup = lower_l_sup(p, cap_at_one);
    let l = opts.l.unwrap_or(sup / 2.0);
    if !(l >= 0.0 && l < sup) {
        return Err(Error::InvalidParameter(format!("l = {l} outside [0, {sup})")));
    }
    let lb = l_bar_bound(p, l);
    let l_bar = opts.l_bar.unwrap_or(lb / 2.0);
    if !(l_bar >= 0.0 && l_bar <= lb) {
        return Err(Error::InvalidParameter(format!("l_bar = {l_bar} outside [0, {lb}]")));
    }
    Ok((l, l_bar))
}

/// Regime H2a: upper `(u, u, u)` from the logistic front, lower
/// `(u_, l u_, l_bar u_)` with `u_ = ((1 - a1)/(1 + l)) u`.
pub fn build_pair_h2a(p: &ModelParams, c: f64, grid: &Grid, opts: &PairOptions) -> Result<BoundingPair> {
    require_variant(p, RegimeVariant::H2a)?;
    let (l, l_bar) = lower_constants(p, opts, false)?;
    let base = base_front(p, c, grid)?;
    let lower = lower_triple(p, &base, l, l_bar)?;
    let upper = vec![base.clone(), base.clone(), base];
    let mut pair = BoundingPair::new(SystemKind::Three, upper, lower, l, Some(l_bar));
    pair.check(p, c)?;
    Ok(pair)
}

#[derive(Debug, Clone)]
pub struct H2bPair {
    pub pair: BoundingPair,
    pub lv2_pair: BoundingPair,
    pub lv2_wave: WaveSolution,
}

/// `min(a2 u - v)` over the nodes of a two-species wave and where it occurs.
pub fn h3_predicate(p: &ModelParams, wave: &WaveSolution) -> (f64, usize) {
    let (u, v) = (&wave.profiles[0].values, &wave.profiles[1].values);
    let mut best = (f64::INFINITY, 0);
    for i in 0..u.len() {
        let d = p.a2 * u[i] - v[i];
        if d < best.0 {
            best = (d, i);
        }
    }
    best
}

fn ordered(upper: &[Profile], lower: &[Profile]) -> bool {
    upper
        .iter()
        .zip(lower)
        .all(|(a, b)| a.values.iter().zip(&b.values).all(|(x, y)| x >= y))
}

/// Smallest node shift `k` (upper used as `upper(xi + k h)`) that orders the
/// pair on the whole grid: doubling search, then bisection.
fn order_shift(upper: &[Profile], lower: &[Profile], max_nodes: usize) -> Option<usize> {
    let shifted = |k: usize| -> Vec<Profile> { upper.iter().map(|u| u.shifted_nodes(k as isize)).collect() };
    if ordered(upper, lower) {
        return Some(0);
    }
    let mut bad = 0;
    let mut k = 1;
    loop {
        if k > max_nodes {
            return None;
        }
        if ordered(&shifted(k), lower) {
            break;
        }
        bad = k;
        k *= 2;
    }
    let mut good = k;
    while good - bad > 1 {
        let mid = (good + bad) / 2;
        if ordered(&shifted(mid), lower) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Some(good)
}

/// Regime H2b: the upper solution is `(u_hat, v_hat, v_hat)` from the
/// converged two-species wave, the lower one the same triple as in H2a with
/// `l < min(r a2/(1 - a1 + r), 1)`; the upper one is slid left until the
/// pair is ordered.
pub fn build_pair_h2b(
    p: &ModelParams,
    c: f64,
    grid: &Grid,
    opts: &PairOptions,
    cfg: &IterationConfig,
) -> Result<H2bPair> {
    require_variant(p, RegimeVariant::H2b)?;
    let (l, l_bar) = lower_constants(p, opts, true)?;
    let lv2_pair = build_pair_lv2(p, c, grid, opts)?;
    let lv2_wave = iterate(&lv2_pair, p, c, cfg)?;
    let (h3_min, node) = h3_predicate(p, &lv2_wave);
    if h3_min < -1e-12 {
        return Err(Error::H3Unsatisfied {
            min_value: h3_min,
            node,
        });
    }
    let (u_hat, v_hat) = (&lv2_wave.profiles[0], &lv2_wave.profiles[1]);
    let upper = vec![u_hat.clone(), v_hat.clone(), v_hat.clone()];
    let base = base_front(p, c, grid)?;
    let lower = lower_triple(p, &base, l, l_bar)?;
    let max_nodes = (grid.half_width / 2.0 / grid.h()).floor() as usize;
    let k = order_shift(&upper, &lower, max_nodes).ok_or(Error::OrderingFailure {
        max_shift: grid.half_width / 2.0,
    })?;
    let upper = upper.iter().map(|u| u.shifted_nodes(k as isize)).collect();
    let mut pair = BoundingPair::new(SystemKind::Three, upper, lower, l, Some(l_bar));
    pair.shift_applied = k as f64 * grid.h();
    pair.h3_min = Some(h3_min);
    pair.check(p, c)?;
    Ok(H2bPair {
        pair,
        lv2_pair,
        lv2_wave,
    })
}

/// Discrete sliding check on `[-N, N]`: with the end dominance
/// `lower(-N) < upper(xi)` and `lower(xi) < upper(N)` in force, slides the
/// upper profiles from a shift of `2N` down to `0` and reports whether
/// `upper(xi + mu) >= lower(xi)` held on every overlap.
pub fn sliding_order_check(upper: &[Profile], lower: &[Profile], half_window: f64) -> Result<bool> {
    if upper.len() != lower.len() || upper.is_empty() {
        return Err(Error::InvalidParameter("profile tuples differ in length".into()));
    }
    let grid = upper[0].grid;
    if upper.iter().chain(lower).any(|p| p.grid != grid) {
        return Err(Error::GridMismatch);
    }
    let nh = half_window.min(grid.half_width);
    let i0 = grid.locate(-nh).0 + usize::from(grid.locate(-nh).1 > 0.0);
    let i1 = grid.locate(nh).0;
    if i1 <= i0 {
        return Err(Error::InvalidParameter(format!("window [-{nh}, {nh}] holds no nodes")));
    }
    for (up, lo) in upper.iter().zip(lower) {
        let (u, l) = (&up.values, &lo.values);
        if (i0 + 1..=i1).any(|j| l[i0] >= u[j]) {
            return Err(Error::PreconditionFailure(format!(
                "lower(-N) is not below upper on (-N, N] for N = {nh}"
            )));
        }
        if (i0..i1).any(|j| l[j] >= u[i1]) {
            return Err(Error::PreconditionFailure(format!(
                "upper(N) is not above lower on [-N, N) for N = {nh}"
            )));
        }
    }
    for mu in (0..=i1 - i0).rev() {
        for (up, lo) in upper.iter().zip(lower) {
            if (i0..=i1 - mu).any(|j| up.values[j + mu] < lo.values[j]) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationDiagnostics {
    pub start: Start,
    pub sweep_order: SweepOrder,
    pub beta: f64,
    pub beta_doubled: bool,
    /// Sup-norm difference of successive sweeps.
    pub diffs: Vec<f64>,
    pub sandwich_checks: usize,
    /// Largest escape from `[lower, upper]` seen over all sweeps.
    pub max_sandwich_excess: f64,
    /// Largest step against the expected direction of monotone convergence.
    pub max_monotonicity_excess: f64,
    pub newton_steps: usize,
    pub converged: bool,
}

/// A computed wave in monotone coordinates.
#[derive(Debug, Clone)]
pub struct WaveSolution {
    pub kind: SystemKind,
    pub params: ModelParams,
    pub c: f64,
    pub regime: Regime,
    pub profiles: Vec<Profile>,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub decay_minus: Vec<Option<DecayFit>>,
    pub decay_plus: Vec<Option<DecayFit>>,
    pub strictly_increasing: bool,
    pub diagnostics: IterationDiagnostics,
}

impl WaveSolution {
    pub fn u(&self) -> &Profile {
        &self.profiles[0]
    }

    pub fn v(&self) -> &Profile {
        &self.profiles[1]
    }

    /// Third component; for the two-species system this is `v` again.
    pub fn w(&self) -> &Profile {
        &self.profiles[self.profiles.len() - 1]
    }

    pub fn grid(&self) -> Grid {
        self.profiles[0].grid
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }
}

struct PicardRun {
    values: Vec<Vec<f64>>,
    sweeps: usize,
    converged: bool,
    diffs: Vec<f64>,
    checks: usize,
    max_excess: f64,
    max_wrong_way: f64,
}

fn picard(sys: &System, pair: &BoundingPair, c: f64, cfg: &IterationConfig, beta: f64) -> Result<PicardRun> {
    let m = sys.kind.dim();
    let grid = pair.upper[0].grid;
    let n = grid.n;
    let solver = ShiftedSolver::new(&grid, c, beta)?;
    let bc: Vec<(f64, f64)> = pair.upper.iter().map(|u| (u.values[0], u.values[n + 1])).collect();
    let start = match cfg.start {
        Start::Upper => &pair.upper,
        Start::Lower => &pair.lower,
    };
    let mut cur: Vec<Vec<f64>> = start.iter().map(|p| p.values.clone()).collect();
    let mut prev = cur.clone();
    let mut rhs = vec![0.0; grid.len()];
    let sign = match cfg.start {
        Start::Upper => 1.0,
        Start::Lower => -1.0,
    };
    let mut run = PicardRun {
        values: Vec::new(),
        sweeps: 0,
        converged: false,
        diffs: Vec::new(),
        checks: 0,
        max_excess: 0.0,
        max_wrong_way: 0.0,
    };
    for sweep in 1..=cfg.max_iters {
        prev.clone_from(&cur);
        for k in 0..m {
            match cfg.sweep_order {
                SweepOrder::GaussSeidel => sys.fill_rhs(k, &cur, beta, &mut rhs),
                SweepOrder::Jacobi => sys.fill_rhs(k, &prev, beta, &mut rhs),
            }
            solver.solve_into(|i| rhs[i], bc[k], &mut cur[k]);
        }
        let mut diff = 0.0f64;
        run.checks += 1;
        for k in 0..m {
            let (up, lo) = (&pair.upper[k].values, &pair.lower[k].values);
            for i in 0..grid.len() {
                let y = cur[k][i];
                let excess = (lo[i] - y).max(y - up[i]);
                if excess > SANDWICH_SLACK {
                    return Err(Error::SandwichViolation {
                        iteration: sweep,
                        node: i,
                        component: k,
                        excess,
                    });
                }
                run.max_excess = run.max_excess.max(excess);
                if sweep > 1 {
                    run.max_wrong_way = run.max_wrong_way.max(sign * (y - prev[k][i]));
                }
                diff = diff.max((y - prev[k][i]).abs());
            }
        }
        run.diffs.push(diff);
        run.sweeps = sweep;
        if diff < cfg.tol {
            run.converged = true;
            break;
        }
    }
    run.values = cur;
    Ok(run)
}

/// Damped Newton on the coupled discretization with the end values frozen.
/// Returns the number of accepted steps.
fn newton_polish(sys: &System, grid: &Grid, c: f64, y: &mut [Vec<f64>], max_steps: usize) -> Result<usize> {
    let m = sys.kind.dim();
    let n = grid.n;
    let h = grid.h();
    let h2 = h * h;
    let (lo, up) = (1.0 + c * h / 2.0, 1.0 - c * h / 2.0);
    let mut rows = vec![0.0; n * m];
    let mut blocks = vec![0.0; n * m * m];
    let mut jac = [0.0; 9];
    let scaled_residual = |y: &[Vec<f64>], rows: &mut [f64]| -> f64 {
        let mut worst = 0.0f64;
        let mut s = [0.0; 3];
        for i in 1..=n {
            for k in 0..m {
                s[k] = y[k][i];
            }
            for k in 0..m {
                let r = lo * y[k][i - 1] - 2.0 * y[k][i] + up * y[k][i + 1] + h2 * sys.reaction_k(k, &s);
                rows[(i - 1) * m + k] = r;
                worst = worst.max(r.abs());
            }
        }
        worst / h2
    };
    let mut res = scaled_residual(y, &mut rows);
    let mut trial: Vec<Vec<f64>> = y.to_vec();
    let mut scratch = vec![0.0; n * m];
    let mut steps = 0;
    while steps < max_steps && res > POLISH_TARGET {
        let mut s = [0.0; 3];
        for i in 1..=n {
            for k in 0..m {
                s[k] = y[k][i];
            }
            sys.jacobian(&s, &mut jac);
            let b = &mut blocks[(i - 1) * m * m..i * m * m];
            for r in 0..m {
                for col in 0..m {
                    b[r * m + col] = h2 * jac[r * m + col] - if r == col { 2.0 } else { 0.0 };
                }
            }
        }
        let mut d: Vec<f64> = rows.iter().map(|r| -r).collect();
        solve_block_tridiagonal(m, lo, up, &mut blocks, &mut d)?;
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= 1.0 / 16.0 {
            for k in 0..m {
                for i in 1..=n {
                    trial[k][i] = y[k][i] + alpha * d[(i - 1) * m + k];
                }
            }
            let r = scaled_residual(&trial, &mut scratch);
            if r < res {
                for k in 0..m {
                    y[k].copy_from_slice(&trial[k]);
                }
                rows.copy_from_slice(&scratch);
                res = r;
                accepted = true;
                break;
            }
            alpha /= 2.0;
        }
        if !accepted {
            break;
        }
        steps += 1;
    }
    Ok(steps)
}

/// Monotone iteration between the pair followed by a Newton polish.
pub fn iterate(pair: &BoundingPair, p: &ModelParams, c: f64, cfg: &IterationConfig) -> Result<WaveSolution> {
    let kind = pair.kind;
    let sys = System { kind, p: *p };
    cfg.validate(&sys)?;
    let table = rates(p, c)?;
    table.require_real()?;
    let grid = pair.upper[0].grid;
    if pair.upper.iter().chain(&pair.lower).any(|q| q.grid != grid) {
        return Err(Error::GridMismatch);
    }
    let beta0 = cfg.beta.unwrap_or_else(|| default_beta(kind, p));
    let (run, beta, doubled) = match picard(&sys, pair, c, cfg, beta0) {
        Ok(run) => (run, beta0, false),
        Err(Error::SandwichViolation { .. }) => (picard(&sys, pair, c, cfg, 2.0 * beta0)?, 2.0 * beta0, true),
        Err(e) => return Err(e),
    };
    let mut values = run.values;
    let newton_steps = newton_polish(&sys, &grid, c, &mut values, cfg.polish_steps)?;
    let mut max_excess = run.max_excess;
    for k in 0..kind.dim() {
        for (i, y) in values[k].iter().enumerate() {
            let excess = (pair.lower[k].values[i] - y).max(y - pair.upper[k].values[i]);
            max_excess = max_excess.max(excess);
        }
    }
    let profiles = values
        .into_iter()
        .map(|v| Profile::new(grid, v, 0.0, 1.0))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Profile> = profiles.iter().collect();
    let ops = operator_values(&refs, c, |y, f| sys.reaction(y, f))?;
    let residuals: Vec<f64> = ops
        .iter()
        .map(|o| o.iter().fold(0.0, |a: f64, v| a.max(v.abs())))
        .collect();
    let critical = table.critical;
    let wave = WaveSolution {
        kind,
        params: *p,
        c,
        regime: classify_regime(p),
        decay_minus: profiles
            .iter()
            .map(|q| fit_tail(q, Side::Minus, critical).ok())
            .collect(),
        decay_plus: profiles.iter().map(|q| fit_tail(q, Side::Plus, false).ok()).collect(),
        strictly_increasing: profiles.iter().all(Profile::is_strictly_increasing),
        profiles,
        iterations: run.sweeps,
        residuals,
        diagnostics: IterationDiagnostics {
            start: cfg.start,
            sweep_order: cfg.sweep_order,
            beta,
            beta_doubled: doubled,
            diffs: run.diffs,
            sandwich_checks: run.checks,
            max_sandwich_excess: max_excess,
            max_monotonicity_excess: run.max_wrong_way,
            newton_steps,
            converged: run.converged,
        },
    };
    if !run.converged {
        let last_diff = wave.diagnostics.diffs.last().copied().unwrap_or(f64::NAN);
        return Err(Error::MaxItersExceeded {
            iterations: run.sweeps,
            last_diff,
            best: Box::new(wave),
        });
    }
    if wave.max_residual() > RESIDUAL_TOL {
        return Err(Error::ConvergenceFailure {
            iterations: run.sweeps,
            residual: wave.max_residual(),
        });
    }
    Ok(wave)
}

/// Both-pipeline result for the three-species system.
#[derive(Debug, Clone)]
pub struct Wave3Outcome {
    pub pair: BoundingPair,
    pub wave: WaveSolution,
    /// Two-species wave used for the upper solution in regime H2b.
    pub lv2_wave: Option<WaveSolution>,
}

/// Classifies, builds the matching pair and iterates.
pub fn solve_wave3(
    p: &ModelParams,
    c: f64,
    grid: &Grid,
    opts: &PairOptions,
    cfg: &IterationConfig,
) -> Result<Wave3Outcome> {
    p.validate()?;
    rates(p, c)?.require_real()?;
    let regime = classify_regime(p);
    match regime.variant {
        RegimeVariant::H2a => {
            let pair = build_pair_h2a(p, c, grid, opts)?;
            let wave = iterate(&pair, p, c, cfg)?;
            Ok(Wave3Outcome {
                pair,
                wave,
                lv2_wave: None,
            })
        }
        RegimeVariant::H2b => {
            let built = build_pair_h2b(p, c, grid, opts, cfg)?;
            let mut wave = iterate(&built.pair, p, c, cfg)?;
            wave.regime = regime.with_h3(true);
            Ok(Wave3Outcome {
                pair: built.pair,
                wave,
                lv2_wave: Some(built.lv2_wave),
            })
        }
        v => Err(Error::Regime(format!(
            "no wave construction covers regime {v:?} (a1={}, a2={}, r={})",
            p.a1, p.a2, p.r
        ))),
    }
}

/// Two-species pair and wave.
pub fn solve_lv2(
    p: &ModelParams,
    c: f64,
    grid: &Grid,
    opts: &PairOptions,
    cfg: &IterationConfig,
) -> Result<(BoundingPair, WaveSolution)> {
    let pair = build_pair_lv2(p, c, grid, opts)?;
    let wave = iterate(&pair, p, c, cfg)?;
    Ok((pair, wave))
}

/// Sup-norm distance of two profile tuples after both are translated so
/// that their first component crosses 1/2 at the origin; compared on the
/// nodes of `a` whose translate lies inside `b`'s domain.
pub fn aligned_distance(a: &[Profile], b: &[Profile]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidParameter("profile tuples differ in length".into()));
    }
    let level = |q: &Profile| 0.5 * (q.left_limit + q.right_limit);
    let sa = a[0]
        .crossing(level(&a[0]))
        .ok_or_else(|| Error::PreconditionFailure("first tuple never crosses 1/2".into()))?;
    let sb = b[0]
        .crossing(level(&b[0]))
        .ok_or_else(|| Error::PreconditionFailure("second tuple never crosses 1/2".into()))?;
    let gb = b[0].grid;
    let mut worst = 0.0f64;
    for (pa, pb) in a.iter().zip(b) {
        let ga = pa.grid;
        for (i, va) in pa.values.iter().enumerate() {
            let x = ga.node(i) - sa + sb;
            if x.abs() > gb.half_width {
                continue;
            }
            worst = worst.max((va - pb.value_at(x)).abs());
        }
    }
    Ok(worst)
}

/// Distance between two waves after phase alignment by `u(0) = 1/2`.
pub fn uniqueness_check(w1: &WaveSolution, w2: &WaveSolution) -> Result<f64> {
    if w1.params != w2.params || (w1.c - w2.c).abs() > 1e-12 || w1.kind != w2.kind {
        return Err(Error::PreconditionFailure("waves belong to different problems".into()));
    }
    aligned_distance(&w1.profiles, &w2.profiles)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h2a() -> ModelParams {
        ModelParams::new(0.5, 2.0, 0.2, 2.0).unwrap()
    }

    fn h2b() -> ModelParams {
        ModelParams::new(0.5, 3.0, 0.25, 2.0).unwrap()
    }

    #[test]
    fn default_constants() {
        let p = h2a();
        assert!((lower_l_sup(&p, false) - 0.4 / 0.7).abs() < 1e-15);
        assert!((l_bar_bound(&p, 0.2857) - 0.2857 / 2.0).abs() < 1e-15);
        assert!((lv2_l_bound(&h2b()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn equilibria_verify_trivially() {
        let p = h2a();
        let g = Grid::new(10.0, 99).unwrap();
        let ones = vec![Profile::constant(g, 1.0); 3];
        let zeros = vec![Profile::constant(g, 0.0); 3];
        let r = verify_bounds(SystemKind::Three, &ones, &zeros, &p, 1.5).unwrap();
        assert!(r.all_ok() && r.ordered());
        assert!(r.upper_max.iter().chain(&r.lower_min).all(|v| *v == 0.0));
    }

    #[test]
    fn h2a_pair_and_upper_v_residual() {
        let p = h2a();
        let g = Grid::with_max_spacing(60.0, 0.02).unwrap();
        let pair = build_pair_h2a(&p, 1.5, &g, &PairOptions::default()).unwrap();
        assert!(pair.verified_upper.iter().chain(&pair.verified_lower).all(|b| *b));
        assert!((pair.l - 0.2 * 2.0 / 0.7 / 2.0).abs() < 1e-15);
        // The v-inequality of the upper solution reduces to
        // [r(a2 - 1) - (1 - a1)] u(1 - u) up to the KPP residual.
        let ops = operator_values(&pair.upper.iter().collect::<Vec<_>>(), 1.5, |y, f| {
            f.copy_from_slice(&reaction_monotone(&p, y[0], y[1], y[2]))
        })
        .unwrap();
        let u = &pair.upper[0].values;
        for i in 1..=g.n {
            let expect = -0.3 * u[i] * (1.0 - u[i]);
            assert!((ops[1][i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn wrong_regime_rejected() {
        let g = Grid::with_max_spacing(60.0, 0.05).unwrap();
        assert!(matches!(
            build_pair_h2a(&h2b(), 1.5, &g, &PairOptions::default()),
            Err(Error::Regime(_))
        ));
        let bad = PairOptions {
            l: Some(0.9),
            ..PairOptions::default()
        };
        assert!(matches!(
            build_pair_h2a(&h2a(), 1.5, &g, &bad),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn lv2_pair_verifies() {
        let p = h2b();
        let g = Grid::with_max_spacing(60.0, 0.02).unwrap();
        let pair = build_pair_lv2(&p, 1.5, &g, &PairOptions::default()).unwrap();
        assert_eq!(pair.upper[0].right_limit, 1.0);
        assert_eq!(pair.upper[1].right_limit, 1.0);
        // A smaller l makes the cap at 1 active.
        let opts = PairOptions {
            lv2_l: Some(0.3),
            ..PairOptions::default()
        };
        let pair = build_pair_lv2(&p, 1.5, &g, &opts).unwrap();
        assert!(pair.upper[0].values.iter().filter(|v| **v == 1.0).count() > 10);
    }

    #[test]
    fn below_minimal_speed() {
        let p = h2a();
        let g = Grid::with_max_spacing(60.0, 0.05).unwrap();
        let c = 0.9 * p.c_min();
        assert!(matches!(
            solve_wave3(&p, c, &g, &PairOptions::default(), &IterationConfig::default()),
            Err(Error::NoMonotoneWave { .. })
        ));
    }

    #[test]
    fn sliding_check_cases() {
        let g = Grid::new(25.0, 499).unwrap();
        let lo = Profile::from_fn(g, 0.0, 1.0, |x| 1.0 / (1.0 + (-x).exp())).unwrap();
        let gap = Profile::raw(g, lo.values.iter().map(|v| v + 0.1).collect(), 0.1, 1.1);
        assert!(sliding_order_check(&[gap], &[lo.clone()], 5.0).unwrap());
        let ahead = Profile::from_fn(g, 0.0, 1.0, |x| 1.0 / (1.0 + (-(x + 0.7)).exp())).unwrap();
        assert!(sliding_order_check(&[ahead], &[lo.clone()], 5.0).unwrap());
        let below = Profile::raw(g, lo.values.iter().map(|v| v - 0.1).collect(), -0.1, 0.9);
        assert!(matches!(
            sliding_order_check(&[below], &[lo], 5.0),
            Err(Error::PreconditionFailure(_))
        ));
    }

    #[test]
    fn alignment_removes_translation() {
        let g = Grid::new(30.0, 2999).unwrap();
        let f = |x: f64| 1.0 / (1.0 + (-0.8 * x).exp());
        let a = Profile::from_fn(g, 0.0, 1.0, f).unwrap();
        let d = 3.7 * g.h();
        let b = Profile::raw(g, g.nodes().iter().map(|x| f(x - d)).collect(), 0.0, 1.0);
        assert!(aligned_distance(&[a.clone()], &[b]).unwrap() < 1e-8);
        assert!(aligned_distance(&[a.clone()], &[a]).unwrap() < 1e-14);
    }

    #[test]
    fn beta_dominates_diagonal() {
        let p = h2a();
        let sys = System {
            kind: SystemKind::Three,
            p,
        };
        let b = default_beta(SystemKind::Three, &p);
        assert!(b >= sys.diagonal_sup());
        let cfg = IterationConfig {
            beta: Some(0.1),
            ..IterationConfig::default()
        };
        assert!(cfg.validate(&sys).is_err());
    }
}
