//! Time-dependent checks: the local three-species system, its nonlocal
//! two-species counterpart with the space-time delay kernel, and front
//! tracking.

use serde::Serialize;

use crate::asymptotics::linear_fit;
use crate::bvp::Grid;
use crate::error::{Error, Result};
use crate::model::{from_monotone, reaction_original, ModelParams};
use crate::system_waves::WaveSolution;

/// Admissible band for every field; leaving it is reported as blow-up.
pub const BAND: (f64, f64) = (-0.05, 1.05);
/// Default `dt / h^2`.
pub const DT_FACTOR: f64 = 0.2;
/// Truncation level of the exponential memory: `T_g = tau ln(1/EPS_G)`.
pub const EPS_G: f64 = 1e-6;

/// Fields on a uniform grid with zero-flux ends, in original coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimState {
    pub grid: Grid,
    pub fields: Vec<Vec<f64>>,
    pub t: f64,
}

impl SimState {
    pub fn new(grid: Grid, fields: Vec<Vec<f64>>, t: f64) -> Result<Self> {
        if fields.is_empty() || fields.iter().any(|f| f.len() != grid.len()) {
            return Err(Error::InvalidParameter(
                "every field needs one value per grid node".into(),
            ));
        }
        let s = SimState { grid, fields, t };
        s.check_band()?;
        Ok(s)
    }

    /// Constant fields.
    pub fn uniform(grid: Grid, values: &[f64]) -> Result<Self> {
        SimState::new(grid, values.iter().map(|v| vec![*v; grid.len()]).collect(), 0.0)
    }

    fn check_band(&self) -> Result<()> {
        for f in &self.fields {
            for (i, v) in f.iter().enumerate() {
                if !(v.is_finite() && *v >= BAND.0 && *v <= BAND.1) {
                    return Err(Error::BlowUp {
                        t: self.t,
                        node: i,
                        value: *v,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Largest stable `dt` of the explicit two-stage scheme for the diffusion
/// part, `h^2 / 2`.
pub fn max_stable_dt(grid: &Grid) -> f64 {
    0.5 * grid.h() * grid.h()
}

pub fn default_dt(grid: &Grid) -> f64 {
    DT_FACTOR * grid.h() * grid.h()
}

/// Second difference with mirror ghost nodes at both ends.
fn laplacian(y: &[f64], h2: f64, out: &mut [f64]) {
    let n = y.len() - 1;
    out[0] = 2.0 * (y[1] - y[0]) / h2;
    out[n] = 2.0 * (y[n - 1] - y[n]) / h2;
    for i in 1..n {
        out[i] = (y[i - 1] - 2.0 * y[i] + y[i + 1]) / h2;
    }
}

fn check_dt(grid: &Grid, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt <= max_stable_dt(grid) * (1.0 + 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "dt = {dt} outside (0, h^2/2 = {}]",
            max_stable_dt(grid)
        )));
    }
    Ok(())
}

fn local_rhs(p: &ModelParams, y: &[Vec<f64>], h2: f64, lap: &mut [f64], out: &mut [Vec<f64>]) {
    for (k, yk) in y.iter().enumerate() {
        laplacian(yk, h2, lap);
        out[k].copy_from_slice(lap);
    }
    for i in 0..y[0].len() {
        let f = reaction_original(p, y[0][i], y[1][i], y[2][i]);
        for k in 0..3 {
            out[k][i] += f[k];
        }
    }
}

/// One Heun step of the local system.
pub fn step_local(state: &SimState, p: &ModelParams, dt: f64) -> Result<SimState> {
    if state.fields.len() != 3 {
        return Err(Error::InvalidParameter("the local system has three fields".into()));
    }
    check_dt(&state.grid, dt)?;
    let h2 = state.grid.h() * state.grid.h();
    let len = state.grid.len();
    let mut lap = vec![0.0; len];
    let mut k1 = vec![vec![0.0; len]; 3];
    let mut k2 = k1.clone();
    local_rhs(p, &state.fields, h2, &mut lap, &mut k1);
    let pred: Vec<Vec<f64>> = (0..3)
        .map(|k| (0..len).map(|i| state.fields[k][i] + dt * k1[k][i]).collect())
        .collect();
    local_rhs(p, &pred, h2, &mut lap, &mut k2);
    let fields = (0..3)
        .map(|k| {
            (0..len)
                .map(|i| state.fields[k][i] + 0.5 * dt * (k1[k][i] + k2[k][i]))
                .collect()
        })
        .collect();
    let next = SimState {
        grid: state.grid,
        fields,
        t: state.t + dt,
    };
    next.check_band()?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frame {
    pub t: f64,
    pub fields: Vec<Vec<f64>>,
}

/// Evolves the local system to `t_end`, keeping a frame roughly every
/// `frame_dt` (the first and last states are always kept). `dt` is reduced
/// so that a whole number of steps lands on `t_end`.
pub fn run_local(
    state: SimState,
    p: &ModelParams,
    dt: f64,
    t_end: f64,
    frame_dt: f64,
) -> Result<(SimState, Vec<Frame>)> {
    let span = t_end - state.t;
    if !(span >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "t_end = {t_end} precedes t = {}",
            state.t
        )));
    }
    let steps = (span / dt).ceil() as usize;
    let dt = if steps > 0 { span / steps as f64 } else { dt };
    let every = ((frame_dt / dt).round() as usize).max(1);
    let mut frames = vec![Frame {
        t: state.t,
        fields: state.fields.clone(),
    }];
    let mut s = state;
    for k in 1..=steps {
        s = step_local(&s, p, dt)?;
        if k % every == 0 || k == steps {
            frames.push(Frame {
                t: s.t,
                fields: s.fields.clone(),
            });
        }
    }
    Ok((s, frames))
}

/// Samples a computed wave, moved to original coordinates, at `x + shift`
/// on `grid`; outside the wave's domain the limits are used.
pub fn state_from_wave(wave: &WaveSolution, grid: Grid, shift: f64) -> Result<SimState> {
    let nodes = grid.nodes();
    let mut fields = vec![vec![0.0; grid.len()]; 3];
    for (i, x) in nodes.iter().enumerate() {
        let u = wave.u().value_at(x + shift);
        let v = wave.v().value_at(x + shift);
        let w = wave.w().value_at(x + shift);
        let o = from_monotone(u, v, w);
        for k in 0..3 {
            fields[k][i] = o[k];
        }
    }
    SimState::new(grid, fields, 0.0)
}

/// Sup-norm distance between a state and the wave sampled at `x + shift`.
pub fn distance_to_wave(state: &SimState, wave: &WaveSolution, shift: f64) -> Result<f64> {
    let reference = state_from_wave(wave, state.grid, shift)?;
    let mut worst = 0.0f64;
    for (a, b) in state.fields.iter().zip(&reference.fields) {
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

/// Truncated space-time kernel `G(x, t) (1/tau) e^{-t/tau}`, integrated in
/// time on a uniform lattice of step `quadrature_step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSpec {
    pub tau: f64,
    pub time_horizon: f64,
    pub quadrature_step: f64,
}

impl KernelSpec {
    /// `time_horizon = tau ln(1/EPS_G)`.
    pub fn new(tau: f64, quadrature_step: f64) -> Result<Self> {
        KernelSpec::with_horizon(tau, tau * (1.0 / EPS_G).ln(), quadrature_step)
    }

    pub fn with_horizon(tau: f64, time_horizon: f64, quadrature_step: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        if !(quadrature_step > 0.0 && time_horizon >= quadrature_step) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < quadrature_step <= time_horizon, got {quadrature_step} and {time_horizon}"
            )));
        }
        Ok(KernelSpec {
            tau,
            time_horizon,
            quadrature_step,
        })
    }

    /// Number of quadrature intervals, `ceil(T_g / ds)`.
    pub fn intervals(&self) -> usize {
        (self.time_horizon / self.quadrature_step - 1e-9).ceil() as usize
    }

    /// Weights `(a, b)` of the newest and oldest node of one interval: the
    /// integrand is interpolated linearly and integrated exactly against
    /// `(1/tau) e^{-s/tau}`.
    fn interval_weights(&self) -> (f64, f64) {
        let q = self.quadrature_step / self.tau;
        let e = (-q).exp();
        let b = if q < 1e-4 {
            q / 2.0 - q * q / 3.0 + q * q * q / 8.0
        } else {
            (1.0 - e * (1.0 + q)) / q
        };
        (1.0 - e - b, b)
    }

    /// Quadrature weight of the snapshot `j` steps back.
    pub fn weight(&self, j: usize) -> f64 {
        let (a, b) = self.interval_weights();
        let q = self.quadrature_step / self.tau;
        let big_j = self.intervals();
        let mut w = 0.0;
        if j < big_j {
            w += a * (-(j as f64) * q).exp();
        }
        if j >= 1 && j <= big_j {
            w += b * (-((j - 1) as f64) * q).exp();
        }
        w
    }

    /// Discrete total mass of the kernel, `1 - e^{-J ds / tau}`.
    pub fn mass(&self) -> f64 {
        (0..=self.intervals()).map(|j| self.weight(j)).sum()
    }
}

/// `e^{-x} I_m(x)` for `m = 0, 1, ...` until negligible: the kernel of the
/// semigroup of the lattice Laplacian at `x = 2 t / h^2`. Computed by
/// Miller's backward recurrence and normalized by `sum_m e^{-x} I_m = 1`.
pub fn lattice_gaussian(x: f64) -> Vec<f64> {
    if x <= 0.0 {
        return vec![1.0];
    }
    let start = (12.0 * x.sqrt() + 40.0).ceil() as usize;
    let mut vals = vec![0.0; start + 2];
    vals[start] = 1.0;
    for m in (1..=start).rev() {
        vals[m - 1] = vals[m + 1] + (2.0 * m as f64 / x) * vals[m];
        if vals[m - 1] > 1e250 {
            for v in vals.iter_mut().skip(m - 1) {
                *v *= 1e-250;
            }
        }
    }
    let total = vals[0] + 2.0 * vals[1..].iter().sum::<f64>();
    let mut k: Vec<f64> = vals.iter().map(|v| v / total).collect();
    while k.len() > 1 && *k.last().unwrap() < 1e-18 {
        k.pop();
    }
    k
}

/// Heat semigroup of the lattice Laplacian with mirror ends at time `t`.
#[derive(Debug, Clone)]
pub struct Smoother {
    /// Offsets and weights of the kernel folded onto one period `2N` of the
    /// even extension; negligible weights are dropped.
    active: Vec<(usize, f64)>,
    len: usize,
}

impl Smoother {
    pub fn new(grid: &Grid, t: f64) -> Self {
        let len = grid.len();
        let period = 2 * (len - 1);
        let k = lattice_gaussian(2.0 * t / (grid.h() * grid.h()));
        let mut folded = vec![0.0; period];
        for (m, v) in k.iter().enumerate() {
            folded[m % period] += v;
            if m > 0 {
                folded[(period - m % period) % period] += v;
            }
        }
        let active = folded
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 1e-18)
            .map(|(m, v)| (m, *v))
            .collect();
        Smoother { active, len }
    }

    pub fn apply(&self, y: &[f64], out: &mut [f64]) {
        let n = self.len - 1;
        let period = 2 * n;
        let reflect = |j: usize| if j > n { period - j } else { j };
        for (i, o) in out.iter_mut().enumerate().take(self.len) {
            let mut s = 0.0;
            for &(m, w) in &self.active {
                s += w * y[reflect((i + m) % period)];
            }
            *o = s;
        }
    }
}

/// Snapshots of `v` at `t0 + j ds`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VHistory {
    pub grid: Grid,
    pub t0: f64,
    pub ds: f64,
    pub frames: Vec<Vec<f64>>,
}

impl VHistory {
    pub fn new(grid: Grid, t0: f64, ds: f64) -> Self {
        VHistory {
            grid,
            t0,
            ds,
            frames: Vec::new(),
        }
    }

    /// Samples `f(x, s)` at `s = t0, t0 + ds, ..., t1`.
    pub fn from_fn(grid: Grid, t0: f64, t1: f64, ds: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut h = VHistory::new(grid, t0, ds);
        let steps = ((t1 - t0) / ds).round() as usize;
        let nodes = grid.nodes();
        for j in 0..=steps {
            let s = t0 + j as f64 * ds;
            h.frames.push(nodes.iter().map(|x| f(*x, s)).collect());
        }
        h
    }

    pub fn push(&mut self, frame: Vec<f64>) {
        self.frames.push(frame);
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + (self.frames.len() as f64 - 1.0) * self.ds
    }

    /// Index of the snapshot at time `t`.
    fn index_of(&self, t: f64) -> Result<usize> {
        let k = (t - self.t0) / self.ds;
        let kr = k.round();
        if (k - kr).abs() > 1e-6 || kr < 0.0 || kr as usize >= self.frames.len() {
            return Err(Error::InvalidParameter(format!("no snapshot at t = {t}")));
        }
        Ok(kr as usize)
    }

    fn check_kernel(&self, kernel: &KernelSpec) -> Result<()> {
        if (kernel.quadrature_step - self.ds).abs() > 1e-12 * self.ds {
            return Err(Error::InvalidParameter(format!(
                "history spacing {} differs from the quadrature step {}",
                self.ds, kernel.quadrature_step
            )));
        }
        Ok(())
    }

    fn check_covers(&self, kernel: &KernelSpec, k: usize) -> Result<()> {
        let need = kernel.intervals();
        if k < need {
            let until = self.t0 + k as f64 * self.ds;
            return Err(Error::InsufficientHistory {
                available_from: self.t0,
                needed_from: until - need as f64 * self.ds,
                until,
            });
        }
        Ok(())
    }
}

/// `g**v` at snapshot time `t` by direct quadrature: every snapshot in
/// `[t - T_g, t]` is smoothed by the lattice heat semigroup of its age.
pub fn delayed_average(history: &VHistory, kernel: &KernelSpec, t: f64) -> Result<Vec<f64>> {
    history.check_kernel(kernel)?;
    let k = history.index_of(t)?;
    history.check_covers(kernel, k)?;
    let len = history.grid.len();
    let mut out = vec![0.0; len];
    let mut tmp = vec![0.0; len];
    for j in 0..=kernel.intervals() {
        let w = kernel.weight(j);
        Smoother::new(&history.grid, j as f64 * kernel.quadrature_step).apply(&history.frames[k - j], &mut tmp);
        for (o, v) in out.iter_mut().zip(&tmp) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Running value of `g**v`, advanced one quadrature step at a time:
/// `M(t + ds) = S(ds)[e^{-ds/tau} M(t) + b v(t)] + a v(t + ds)`.
/// Gives the same numbers as [`delayed_average`] once a full horizon has
/// been accumulated.
#[derive(Debug, Clone)]
pub struct DelayMemory {
    pub kernel: KernelSpec,
    pub value: Vec<f64>,
    pub t: f64,
    smoother: Smoother,
    a: f64,
    b: f64,
    decay: f64,
}

impl DelayMemory {
    fn empty(grid: &Grid, kernel: KernelSpec, t: f64) -> Self {
        let (a, b) = kernel.interval_weights();
        DelayMemory {
            smoother: Smoother::new(grid, kernel.quadrature_step),
            value: vec![0.0; grid.len()],
            t,
            a,
            b,
            decay: (-kernel.quadrature_step / kernel.tau).exp(),
            kernel,
        }
    }

    /// Accumulates the last `T_g` of history up to time `t`.
    pub fn from_history(history: &VHistory, kernel: KernelSpec, t: f64) -> Result<Self> {
        history.check_kernel(&kernel)?;
        let k = history.index_of(t)?;
        history.check_covers(&kernel, k)?;
        let j = kernel.intervals();
        let mut m = DelayMemory::empty(&history.grid, kernel, t - j as f64 * kernel.quadrature_step);
        for s in k - j..k {
            let base = m.base(&history.frames[s]);
            m.value = base;
            m.finish(&history.frames[s + 1]);
        }
        Ok(m)
    }

    /// `S(ds)[e^{-ds/tau} M + b v_now]`, the part of the next value that
    /// does not depend on the next `v`.
    pub fn base(&self, v_now: &[f64]) -> Vec<f64> {
        let tmp: Vec<f64> = self
            .value
            .iter()
            .zip(v_now)
            .map(|(m, v)| self.decay * m + self.b * v)
            .collect();
        let mut out = vec![0.0; tmp.len()];
        self.smoother.apply(&tmp, &mut out);
        out
    }

    /// Completes a step after `value` was set to [`DelayMemory::base`].
    fn finish(&mut self, v_next: &[f64]) {
        for (m, v) in self.value.iter_mut().zip(v_next) {
            *m += self.a * v;
        }
        self.t += self.kernel.quadrature_step;
    }

    pub fn newest_weight(&self) -> f64 {
        self.a
    }
}

/// `(u, v)` of the nonlocal system together with the memory `g**v`.
#[derive(Debug, Clone)]
pub struct NonlocalSim {
    pub state: SimState,
    pub memory: DelayMemory,
}

impl NonlocalSim {
    /// Starts at the end of `history` with `u0` and the last snapshot as `v`.
    pub fn new(u0: Vec<f64>, history: &VHistory, kernel: KernelSpec) -> Result<Self> {
        let t = history.end_time();
        let memory = DelayMemory::from_history(history, kernel, t)?;
        let v0 = history.frames.last().unwrap().clone();
        let state = SimState::new(history.grid, vec![u0, v0], t)?;
        Ok(NonlocalSim { state, memory })
    }
}

fn nonlocal_rhs(p: &ModelParams, u: &[f64], v: &[f64], m: &[f64], h2: f64, lap: &mut [f64], out: &mut [Vec<f64>]) {
    laplacian(u, h2, lap);
    for i in 0..u.len() {
        out[0][i] = lap[i] + u[i] * (1.0 - u[i] - p.a1 * m[i]);
    }
    laplacian(v, h2, lap);
    for i in 0..v.len() {
        out[1][i] = lap[i] + p.r * v[i] * (1.0 - p.a2 * u[i] - v[i]);
    }
}

/// One Heun step of the nonlocal system; the time step is the kernel's
/// quadrature step so that the memory advances in lockstep.
pub fn step_nonlocal(sim: &mut NonlocalSim, p: &ModelParams) -> Result<()> {
    let grid = sim.state.grid;
    let dt = sim.memory.kernel.quadrature_step;
    check_dt(&grid, dt)?;
    let h2 = grid.h() * grid.h();
    let len = grid.len();
    let (u, v) = (&sim.state.fields[0], &sim.state.fields[1]);
    let base = sim.memory.base(v);
    let a = sim.memory.newest_weight();
    let mut lap = vec![0.0; len];
    let mut k1 = vec![vec![0.0; len]; 2];
    let mut k2 = k1.clone();
    nonlocal_rhs(p, u, v, &sim.memory.value, h2, &mut lap, &mut k1);
    let up: Vec<f64> = (0..len).map(|i| u[i] + dt * k1[0][i]).collect();
    let vp: Vec<f64> = (0..len).map(|i| v[i] + dt * k1[1][i]).collect();
    let mp: Vec<f64> = (0..len).map(|i| base[i] + a * vp[i]).collect();
    nonlocal_rhs(p, &up, &vp, &mp, h2, &mut lap, &mut k2);
    let un: Vec<f64> = (0..len).map(|i| u[i] + 0.5 * dt * (k1[0][i] + k2[0][i])).collect();
    let vn: Vec<f64> = (0..len).map(|i| v[i] + 0.5 * dt * (k1[1][i] + k2[1][i])).collect();
    sim.memory.value = base;
    sim.memory.finish(&vn);
    sim.state = SimState {
        grid,
        fields: vec![un, vn],
        t: sim.state.t + dt,
    };
    sim.state.check_band()
}

/// Sup-norm over interior nodes and the sampled times of
/// `w_t - w_xx - (v - w)/tau` for `w = g**v` computed by direct quadrature;
/// `w_t` by central differences over one snapshot spacing. Evaluated at up
/// to `samples` snapshot times spread over the admissible range.
pub fn convolution_identity_check(history: &VHistory, kernel: &KernelSpec, samples: usize) -> Result<f64> {
    history.check_kernel(kernel)?;
    let j = kernel.intervals();
    let last = history.frames.len().saturating_sub(2);
    if last < j + 1 {
        return Err(Error::InsufficientHistory {
            available_from: history.t0,
            needed_from: history.end_time() - (j + 2) as f64 * history.ds,
            until: history.end_time(),
        });
    }
    let first = j + 1;
    let samples = samples.max(1).min(last - first + 1);
    let h2 = history.grid.h() * history.grid.h();
    let len = history.grid.len();
    let mut lap = vec![0.0; len];
    let mut worst = 0.0f64;
    for s in 0..samples {
        let k = if samples == 1 {
            last
        } else {
            first + s * (last - first) / (samples - 1)
        };
        let at = |idx: usize| delayed_average(history, kernel, history.t0 + idx as f64 * history.ds);
        let (wm, w0, wp) = (at(k - 1)?, at(k)?, at(k + 1)?);
        laplacian(&w0, h2, &mut lap);
        let v = &history.frames[k];
        for i in 1..len - 1 {
            let r = (wp[i] - wm[i]) / (2.0 * history.ds) - lap[i] - (v[i] - w0[i]) / kernel.tau;
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedReport {
    /// Slope of the crossing position against time, in `x` per unit time.
    pub speed: f64,
    pub r_squared: f64,
    pub level: f64,
    pub component: usize,
    /// `(t, x)` of every frame's crossing.
    pub positions: Vec<(f64, f64)>,
}

/// Position where `y` crosses `level`, by linear interpolation; errors if
/// there is no crossing or more than one.
pub fn crossing_position(grid: &Grid, y: &[f64], level: f64, frame: usize) -> Result<f64> {
    let mut found = None;
    let mut count = 0;
    let mut prev: Option<(usize, f64)> = None;
    for (i, v) in y.iter().enumerate() {
        let d = v - level;
        if d == 0.0 {
            continue;
        }
        if let Some((j, dp)) = prev {
            if dp.signum() != d.signum() {
                count += 1;
                let (xa, xb) = (grid.node(j), grid.node(i));
                found = Some(xa + (xb - xa) * dp / (dp - d));
            }
        }
        prev = Some((i, d));
    }
    match count {
        0 => Err(Error::NoCrossing { frame, level }),
        1 => Ok(found.unwrap()),
        n => Err(Error::NonMonotoneFront {
            frame,
            level,
            crossings: n,
        }),
    }
}

/// Linear regression of the crossing position of `component` against time
/// over the last half of the frames.
pub fn measure_speed(grid: &Grid, frames: &[Frame], component: usize, level: f64) -> Result<SpeedReport> {
    if frames.len() < 4 {
        return Err(Error::InvalidParameter("need at least four frames".into()));
    }
    let mut positions = Vec::with_capacity(frames.len());
    for (k, f) in frames.iter().enumerate() {
        let y = f
            .fields
            .get(component)
            .ok_or_else(|| Error::InvalidParameter(format!("no component {component}")))?;
        positions.push((f.t, crossing_position(grid, y, level, k)?));
    }
    let tail = &positions[positions.len() / 2..];
    let t: Vec<f64> = tail.iter().map(|p| p.0).collect();
    let x: Vec<f64> = tail.iter().map(|p| p.1).collect();
    let fit = linear_fit(&t, &x);
    Ok(SpeedReport {
        speed: fit.slope,
        r_squared: fit.r_squared,
        level,
        component,
        positions,
    })
}
