//! Command line front end: configuration merging, pipeline dispatch and
//! report writing.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{match_wave_asymptotics, AsymptoticsReport, DecayFit};
use crate::bvp::{write_columns, Grid, Profile};
use crate::error::{Error, Result};
use crate::model::{classify_regime, rates, ModelParams, Regime};
use crate::pde::{
    convolution_identity_check, default_dt, distance_to_wave, measure_speed, run_local, state_from_wave, KernelSpec,
    SpeedReport, VHistory,
};
use crate::scalar_waves::{kpp_minus_rate, kpp_plus_rate, solve_kpp_with, KppNonlinearity, KppOptions, KppProblem};
use crate::system_waves::{
    solve_lv2, solve_wave3, verify_pair, wave_grid, BoundingPair, IterationConfig, IterationDiagnostics, PairOptions,
    PairReport, SystemKind, WaveSolution,
};

/// Default spacing bound for wave grids.
pub const DEFAULT_H: f64 = 0.02;

const PRECEDENCE: &str = "Values are resolved as: command-line flag > --config file > built-in default.\n\
Exit codes: 0 success, 2 configuration or i/o error, 3 regime or precondition error, 4 numerical failure.\n\
TRICOMP_THREADS caps the worker count of `sweep`.";

#[derive(Debug, Parser)]
#[command(name = "tricomp", version, about = "Traveling waves of a three-species competition-cooperation system", after_help = PRECEDENCE)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scalar KPP front of u'' - c u' + u(1 - a1 - u) = 0.
    Kpp(CommonArgs),
    /// Two-species wave from its upper/lower pair.
    Lv2(CommonArgs),
    /// Three-species wave: classify, build the pair, iterate, analyze tails.
    Wave3(CommonArgs),
    /// Seed the local PDE with a computed wave and track the front.
    Simulate(SimulateArgs),
    /// Solve over a list of speeds, rows in parallel.
    Sweep(SweepArgs),
    /// Check the kernel mass and the delay-to-local identity.
    VerifyKernel(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
#[command(after_help = PRECEDENCE)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Wave speed, or a comma separated list for `sweep`.
    #[arg(long, value_delimiter = ',')]
    pub c: Option<Vec<f64>>,
    #[arg(long)]
    pub a1: Option<f64>,
    #[arg(long)]
    pub a2: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Domain half-width; the grid is [-L, L].
    #[arg(long = "L")]
    pub half_width: Option<f64>,
    /// Number of interior grid nodes.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stopping tolerance of the nonlinear solve.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Monotone shift parameter.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Free constant l of the lower solution.
    #[arg(long)]
    pub l: Option<f64>,
    /// Free constant l_bar of the lower solution.
    #[arg(long)]
    pub l_bar: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Final time.
    #[arg(long)]
    pub t_end: Option<f64>,
    /// PDE grid spacing.
    #[arg(long)]
    pub pde_h: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Problem solved in every row.
    #[arg(long, value_enum)]
    pub system: Option<SweepSystem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Kpp,
    Lv2,
    Wave3,
    Simulate,
    Sweep,
    VerifyKernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepSystem {
    Kpp,
    Lv2,
    Wave3,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: Option<Pipeline>,
    pub params: Option<ParamsConfig>,
    pub c: Option<Speeds>,
    pub grid: Option<GridConfig>,
    pub overrides: Option<Overrides>,
    pub simulate: Option<SimulateConfig>,
    pub kernel: Option<KernelConfig>,
    pub sweep: Option<SweepConfig>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub r: Option<f64>,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Speeds {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "L")]
    pub half_width: Option<f64>,
    pub n: Option<usize>,
    /// Spacing bound used when `n` is not given.
    pub h: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub l: Option<f64>,
    pub l_bar: Option<f64>,
    pub beta: Option<f64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    /// Recorded in the manifest; no pipeline draws random numbers.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub t_end: Option<f64>,
    pub h: Option<f64>,
    pub half_width: Option<f64>,
    pub frame_dt: Option<f64>,
    pub level: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub ds: Option<f64>,
    pub h: Option<f64>,
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub system: Option<SweepSystem>,
}

/// Fully merged configuration; this is what the manifest hashes.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub pipeline: Pipeline,
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub r: Option<f64>,
    pub tau: Option<f64>,
    pub speeds: Vec<f64>,
    pub grid: GridConfig,
    pub overrides: Overrides,
    pub simulate: ResolvedSimulate,
    pub kernel: ResolvedKernel,
    pub sweep_system: SweepSystem,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResolvedSimulate {
    pub t_end: f64,
    pub h: f64,
    pub half_width: f64,
    pub frame_dt: f64,
    pub level: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResolvedKernel {
    pub ds: f64,
    pub h: f64,
    pub half_width: f64,
}

impl Resolved {
    fn params(&self) -> Result<ModelParams> {
        let need = |name: &str, v: Option<f64>| v.ok_or_else(|| Error::Config(format!("parameter {name} is required")));
        ModelParams::new(
            need("a1", self.a1)?,
            need("a2", self.a2)?,
            need("r", self.r)?,
            need("tau", self.tau)?,
        )
    }

    /// Parameters of the two-species problem; `tau` is irrelevant there and
    /// defaults to 1.
    fn params_lv2(&self) -> Result<ModelParams> {
        let mut r = self.clone();
        r.tau = Some(r.tau.unwrap_or(1.0));
        r.params()
    }

    fn a1(&self) -> Result<f64> {
        self.a1.ok_or_else(|| Error::Config("parameter a1 is required".into()))
    }

    fn single_speed(&self) -> Result<f64> {
        match self.speeds.as_slice() {
            [c] => Ok(*c),
            [] => Err(Error::Config("a wave speed c is required".into())),
            _ => Err(Error::Config(
                "this pipeline takes one speed; use `sweep` for a list".into(),
            )),
        }
    }

    fn h_max(&self) -> f64 {
        self.grid.h.unwrap_or(DEFAULT_H)
    }

    /// Explicit grid if `L` was given, otherwise `auto(h)` with `n`
    /// applied on top when present.
    fn grid_or(&self, auto: impl FnOnce(f64) -> Result<Grid>) -> Result<Grid> {
        match (self.grid.half_width, self.grid.n) {
            (Some(l), Some(n)) => Grid::new(l, n),
            (Some(l), None) => Grid::with_max_spacing(l, self.h_max()),
            (None, Some(n)) => Grid::new(auto(self.h_max())?.half_width, n),
            (None, None) => auto(self.h_max()),
        }
    }

    fn iteration(&self) -> IterationConfig {
        let mut cfg = IterationConfig {
            beta: self.overrides.beta,
            ..IterationConfig::default()
        };
        if let Some(t) = self.overrides.tol {
            cfg.tol = t;
        }
        if let Some(m) = self.overrides.max_iters {
            cfg.max_iters = m;
        }
        cfg
    }

    fn pair_options(&self) -> PairOptions {
        PairOptions {
            l: self.overrides.l,
            l_bar: self.overrides.l_bar,
            lv2_l: None,
        }
    }

    /// Hex SHA-256 of the canonical JSON of the resolved configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("resolved config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// Merges flags over the file over defaults.
pub fn resolve(
    pipeline: Pipeline,
    args: &CommonArgs,
    file: &RunConfig,
    t_end: Option<f64>,
    pde_h: Option<f64>,
    system: Option<SweepSystem>,
) -> Result<Resolved> {
    let fp = file.params.unwrap_or_default();
    let fg = file.grid.unwrap_or_default();
    let fo = file.overrides.unwrap_or_default();
    let fs = file.simulate.unwrap_or_default();
    let fk = file.kernel.unwrap_or_default();
    let speeds = match (&args.c, &file.c) {
        (Some(v), _) => v.clone(),
        (None, Some(Speeds::One(c))) => vec![*c],
        (None, Some(Speeds::Many(v))) => v.clone(),
        (None, None) => Vec::new(),
    };
    if let Some(c) = speeds.iter().find(|c| !c.is_finite()) {
        return Err(Error::Config(format!("speed {c} is not finite")));
    }
    let resolved = Resolved {
        pipeline,
        a1: pick(args.a1, fp.a1),
        a2: pick(args.a2, fp.a2),
        r: pick(args.r, fp.r),
        tau: pick(args.tau, fp.tau),
        speeds,
        grid: GridConfig {
            half_width: pick(args.half_width, fg.half_width),
            n: pick(args.n, fg.n),
            h: fg.h,
        },
        overrides: Overrides {
            l: pick(args.l, fo.l),
            l_bar: pick(args.l_bar, fo.l_bar),
            beta: pick(args.beta, fo.beta),
            tol: pick(args.tol, fo.tol),
            max_iters: pick(args.max_iters, fo.max_iters),
            seed: fo.seed,
        },
        simulate: ResolvedSimulate {
            t_end: pick(t_end, fs.t_end).unwrap_or(20.0),
            h: pick(pde_h, fs.h).unwrap_or(0.1),
            half_width: fs.half_width.unwrap_or(60.0),
            frame_dt: fs.frame_dt.unwrap_or(0.5),
            level: fs.level.unwrap_or(0.5),
        },
        kernel: ResolvedKernel {
            ds: fk.ds.unwrap_or(0.1),
            h: fk.h.unwrap_or(0.2),
            half_width: fk.half_width.unwrap_or(20.0),
        },
        sweep_system: pick(system, file.sweep.and_then(|s| s.system)).unwrap_or(SweepSystem::Wave3),
        output_dir: pick(args.out.clone(), file.output_dir.clone()).unwrap_or_else(|| PathBuf::from("tricomp-out")),
    };
    check_required(&resolved)?;
    Ok(resolved)
}

fn check_required(r: &Resolved) -> Result<()> {
    let missing = |names: &[(&str, Option<f64>)]| -> Result<()> {
        let absent: Vec<&str> = names.iter().filter(|(_, v)| v.is_none()).map(|(n, _)| *n).collect();
        if absent.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "missing required parameter(s): {}",
                absent.join(", ")
            )))
        }
    };
    let all = [("a1", r.a1), ("a2", r.a2), ("r", r.r), ("tau", r.tau)];
    match r.pipeline {
        Pipeline::Kpp => missing(&all[..1])?,
        Pipeline::Lv2 => missing(&all[..3])?,
        Pipeline::Wave3 | Pipeline::Simulate => missing(&all)?,
        Pipeline::VerifyKernel => missing(&all[3..])?,
        Pipeline::Sweep => match r.sweep_system {
            SweepSystem::Kpp => missing(&all[..1])?,
            SweepSystem::Lv2 => missing(&all[..3])?,
            SweepSystem::Wave3 => missing(&all)?,
        },
    }
    match r.pipeline {
        Pipeline::VerifyKernel => {}
        Pipeline::Sweep => {
            if r.speeds.len() < 2 {
                return Err(Error::Config(format!(
                    "sweep needs at least two speeds, got {}",
                    r.speeds.len()
                )));
            }
        }
        _ => {
            r.single_speed()?;
        }
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Parses arguments, runs the pipeline and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    execute(&cli)
}

pub fn execute(cli: &Cli) -> i32 {
    let (pipeline, common, t_end, pde_h, system) = match &cli.command {
        Command::Kpp(a) => (Pipeline::Kpp, a, None, None, None),
        Command::Lv2(a) => (Pipeline::Lv2, a, None, None, None),
        Command::Wave3(a) => (Pipeline::Wave3, a, None, None, None),
        Command::Simulate(s) => (Pipeline::Simulate, &s.common, s.t_end, s.pde_h, None),
        Command::Sweep(s) => (Pipeline::Sweep, &s.common, None, None, s.system),
        Command::VerifyKernel(a) => (Pipeline::VerifyKernel, a, None, None, None),
    };
    let resolved = match load_config(common.config.as_deref())
        .and_then(|file| resolve(pipeline, common, &file, t_end, pde_h, system))
    {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if let Err(e) = std::fs::create_dir_all(&resolved.output_dir) {
        eprintln!("error: cannot create {}: {e}", resolved.output_dir.display());
        return 2;
    }
    let mut run = Run::new(&resolved);
    let result = dispatch(&resolved, &mut run);
    let code = match &result {
        Ok(()) => 0,
        Err(e) => e.exit_code(),
    };
    if let Err(e) = run.write_manifest(&resolved, result.as_ref().err(), code) {
        eprintln!("error: {e}");
        return 2;
    }
    match result {
        Ok(()) => {
            println!("{}", resolved.output_dir.join("manifest.json").display());
            0
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            code
        }
    }
}

/// Bookkeeping of one invocation: written report paths and the regime.
struct Run {
    dir: PathBuf,
    reports: Vec<String>,
    regime: Option<Regime>,
}

#[derive(Serialize)]
struct ErrorInfo {
    kind: &'static str,
    message: String,
}

impl From<&Error> for ErrorInfo {
    fn from(e: &Error) -> Self {
        ErrorInfo {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    pipeline: Pipeline,
    config_sha256: String,
    config: &'a Resolved,
    regime: Option<Regime>,
    status: &'static str,
    exit_code: i32,
    error: Option<ErrorInfo>,
    reports: &'a [String],
}

impl Run {
    fn new(r: &Resolved) -> Self {
        let regime = ModelParams::new(
            r.a1.unwrap_or(f64::NAN),
            r.a2.unwrap_or(f64::NAN),
            r.r.unwrap_or(f64::NAN),
            r.tau.unwrap_or(f64::NAN),
        )
        .ok()
        .map(|p| classify_regime(&p));
        Run {
            dir: r.output_dir.clone(),
            reports: Vec::new(),
            regime,
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.reports.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    fn write_manifest(&self, r: &Resolved, err: Option<&Error>, code: i32) -> Result<()> {
        let m = Manifest {
            tool: "tricomp",
            version: env!("CARGO_PKG_VERSION"),
            pipeline: r.pipeline,
            config_sha256: r.hash(),
            config: r,
            regime: self.regime,
            status: if err.is_none() { "ok" } else { "error" },
            exit_code: code,
            error: err.map(ErrorInfo::from),
            reports: &self.reports,
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Io(e.to_string()))?;
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

fn dispatch(r: &Resolved, run: &mut Run) -> Result<()> {
    match r.pipeline {
        Pipeline::Kpp => kpp_pipeline(r, run),
        Pipeline::Lv2 => lv2_pipeline(r, run),
        Pipeline::Wave3 => wave3_pipeline(r, run).map(|_| ()),
        Pipeline::Simulate => simulate_pipeline(r, run),
        Pipeline::Sweep => sweep_pipeline(r, run),
        Pipeline::VerifyKernel => kernel_pipeline(r, run),
    }
}

/// Grid for a logistic KPP front wide enough for both tail fits.
pub fn kpp_grid(a1: f64, c: f64, h_max: f64) -> Result<Grid> {
    let problem = KppProblem::new(KppNonlinearity::Logistic { a1 }, c);
    problem.validate()?;
    let lambda = kpp_minus_rate(&problem).ok_or(Error::NoMonotoneWave {
        c,
        c_min: problem.c_min(),
    })?;
    let mu = kpp_plus_rate(&problem).abs();
    let l = (25.0 / lambda).max(22.0 / mu).max(40.0);
    Grid::with_max_spacing((l / 10.0).ceil() * 10.0, h_max)
}

#[derive(Serialize)]
struct GridInfo {
    #[serde(rename = "L")]
    half_width: f64,
    n: usize,
    h: f64,
}

impl From<Grid> for GridInfo {
    fn from(g: Grid) -> Self {
        GridInfo {
            half_width: g.half_width,
            n: g.n,
            h: g.h(),
        }
    }
}

#[derive(Serialize)]
struct KppReport {
    pipeline: Pipeline,
    a1: f64,
    c: f64,
    c_min: f64,
    critical: bool,
    grid: GridInfo,
    residual: f64,
    newton_steps: usize,
    picard_sweeps: usize,
    rate_minus: Option<f64>,
    rate_minus_predicted: Option<f64>,
    rate_plus: Option<f64>,
    rate_plus_predicted: f64,
    decay_minus: Option<DecayFit>,
    decay_plus: Option<DecayFit>,
}

fn kpp_pipeline(r: &Resolved, run: &mut Run) -> Result<()> {
    let a1 = r.a1()?;
    let c = r.single_speed()?;
    let grid = r.grid_or(|h| kpp_grid(a1, c, h))?;
    let problem = KppProblem::new(KppNonlinearity::Logistic { a1 }, c);
    let mut opts = KppOptions::default();
    if let Some(t) = r.overrides.tol {
        opts.tol = t;
    }
    if let Some(m) = r.overrides.max_iters {
        opts.max_newton = m;
    }
    let wave = solve_kpp_with(&problem, &grid, &opts)?;
    write_columns(&run.path("profiles.csv"), &grid, &["omega"], &[&wave.profile])?;
    let report = KppReport {
        pipeline: r.pipeline,
        a1,
        c,
        c_min: problem.c_min(),
        critical: wave.critical,
        grid: grid.into(),
        residual: wave.residual,
        newton_steps: wave.newton_steps,
        picard_sweeps: wave.picard_sweeps,
        rate_minus: wave.decay_minus.as_ref().map(|f| f.rate),
        rate_minus_predicted: kpp_minus_rate(&problem),
        rate_plus: wave.decay_plus.as_ref().map(|f| f.rate),
        rate_plus_predicted: kpp_plus_rate(&problem),
        decay_minus: wave.decay_minus.clone(),
        decay_plus: wave.decay_plus.clone(),
    };
    run.json("report.json", &report)
}

#[derive(Serialize)]
struct DiagnosticsSummary {
    beta: f64,
    beta_doubled: bool,
    sweeps_logged: usize,
    first_diff: Option<f64>,
    last_diff: Option<f64>,
    sandwich_checks: usize,
    max_sandwich_excess: f64,
    max_monotonicity_excess: f64,
    newton_steps: usize,
    converged: bool,
}

impl From<&IterationDiagnostics> for DiagnosticsSummary {
    fn from(d: &IterationDiagnostics) -> Self {
        DiagnosticsSummary {
            beta: d.beta,
            beta_doubled: d.beta_doubled,
            sweeps_logged: d.diffs.len(),
            first_diff: d.diffs.first().copied(),
            last_diff: d.diffs.last().copied(),
            sandwich_checks: d.sandwich_checks,
            max_sandwich_excess: d.max_sandwich_excess,
            max_monotonicity_excess: d.max_monotonicity_excess,
            newton_steps: d.newton_steps,
            converged: d.converged,
        }
    }
}

#[derive(Serialize)]
struct WaveSummary<'a> {
    kind: SystemKind,
    c: f64,
    regime: Regime,
    grid: GridInfo,
    iterations: usize,
    residuals: &'a [f64],
    max_residual: f64,
    strictly_increasing: bool,
    decay_minus: &'a [Option<DecayFit>],
    decay_plus: &'a [Option<DecayFit>],
    diagnostics: DiagnosticsSummary,
}

impl<'a> From<&'a WaveSolution> for WaveSummary<'a> {
    fn from(w: &'a WaveSolution) -> Self {
        WaveSummary {
            kind: w.kind,
            c: w.c,
            regime: w.regime,
            grid: w.grid().into(),
            iterations: w.iterations,
            residuals: &w.residuals,
            max_residual: w.max_residual(),
            strictly_increasing: w.strictly_increasing,
            decay_minus: &w.decay_minus,
            decay_plus: &w.decay_plus,
            diagnostics: (&w.diagnostics).into(),
        }
    }
}

#[derive(Serialize)]
struct PairSummary {
    shift_applied: f64,
    l: f64,
    l_bar: Option<f64>,
    h3_min: Option<f64>,
    verification: PairReport,
}

fn pair_summary(pair: &BoundingPair, p: &ModelParams, c: f64) -> Result<PairSummary> {
    Ok(PairSummary {
        shift_applied: pair.shift_applied,
        l: pair.l,
        l_bar: pair.l_bar,
        h3_min: pair.h3_min,
        verification: verify_pair(pair, p, c)?,
    })
}

const MONO_NAMES: [&str; 3] = ["u", "vbar", "wbar"];

/// Writes the wave in monotone coordinates next to the pair that bounds it.
fn write_wave_csv(run: &mut Run, name: &str, wave: &WaveSolution, pair: Option<&BoundingPair>) -> Result<()> {
    let m = wave.profiles.len();
    let mut names: Vec<String> = MONO_NAMES[..m].iter().map(|s| s.to_string()).collect();
    let mut cols: Vec<&Profile> = wave.profiles.iter().collect();
    if let Some(pair) = pair {
        for (tag, side) in [("upper", &pair.upper), ("lower", &pair.lower)] {
            for (k, prof) in side.iter().enumerate() {
                names.push(format!("{tag}_{}", MONO_NAMES[k]));
                cols.push(prof);
            }
        }
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    write_columns(&run.path(name), &wave.grid(), &refs, &cols)
}

/// On a capped iteration, keeps the best iterate before passing the error on.
fn keep_best(run: &mut Run, e: Error) -> Error {
    if let Error::MaxItersExceeded { best, .. } = &e {
        if let Err(w) = write_wave_csv(run, "best_profiles.csv", best, None) {
            eprintln!("warning: could not write best iterate: {w}");
        }
    }
    e
}

#[derive(Serialize)]
struct Lv2Report<'a> {
    pipeline: Pipeline,
    params: ModelParams,
    pair: PairSummary,
    wave: WaveSummary<'a>,
    h3_min: f64,
}

fn lv2_pipeline(r: &Resolved, run: &mut Run) -> Result<()> {
    let p = r.params_lv2()?;
    let c = r.single_speed()?;
    rates(&p, c)?.require_real()?;
    let grid = r.grid_or(|h| wave_grid(&p, c, h))?;
    let (pair, wave) = solve_lv2(&p, c, &grid, &r.pair_options(), &r.iteration()).map_err(|e| keep_best(run, e))?;
    write_wave_csv(run, "profiles.csv", &wave, Some(&pair))?;
    let report = Lv2Report {
        pipeline: r.pipeline,
        params: p,
        pair: pair_summary(&pair, &p, c)?,
        h3_min: crate::system_waves::h3_predicate(&p, &wave).0,
        wave: (&wave).into(),
    };
    run.json("report.json", &report)
}

#[derive(Serialize)]
struct Wave3Report<'a> {
    pipeline: Pipeline,
    params: ModelParams,
    pair: PairSummary,
    wave: WaveSummary<'a>,
    lv2_wave: Option<WaveSummary<'a>>,
    asymptotics: Option<AsymptoticsReport>,
    asymptotics_error: Option<String>,
}

fn wave3_pipeline(r: &Resolved, run: &mut Run) -> Result<WaveSolution> {
    let p = r.params()?;
    let c = r.single_speed()?;
    rates(&p, c)?.require_real()?;
    let grid = r.grid_or(|h| wave_grid(&p, c, h))?;
    let out = solve_wave3(&p, c, &grid, &r.pair_options(), &r.iteration()).map_err(|e| keep_best(run, e))?;
    run.regime = Some(out.wave.regime);
    write_wave_csv(run, "profiles.csv", &out.wave, Some(&out.pair))?;
    let (asymptotics, asymptotics_error) = match match_wave_asymptotics(&out.wave) {
        Ok(a) => (Some(a), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = Wave3Report {
        pipeline: Pipeline::Wave3,
        params: p,
        pair: pair_summary(&out.pair, &p, c)?,
        wave: (&out.wave).into(),
        lv2_wave: out.lv2_wave.as_ref().map(WaveSummary::from),
        asymptotics,
        asymptotics_error,
    };
    let name = if r.pipeline == Pipeline::Wave3 {
        "report.json"
    } else {
        "wave_report.json"
    };
    run.json(name, &report)?;
    Ok(out.wave)
}

#[derive(Serialize)]
struct SimulateReport {
    pipeline: Pipeline,
    params: ModelParams,
    c: f64,
    grid: GridInfo,
    dt: f64,
    t_end: f64,
    /// Sup-norm distance to the wave translated by `c t_end`.
    persistence_error: f64,
    speed_predicted: f64,
    speed_relative_error: f64,
    speed: SpeedReport,
}

fn simulate_pipeline(r: &Resolved, run: &mut Run) -> Result<()> {
    let s = r.simulate;
    let wave = wave3_pipeline(r, run)?;
    let p = wave.params;
    let c = wave.c;
    let grid = Grid::with_max_spacing(s.half_width, s.h)?;
    let dt = default_dt(&grid);
    let start = state_from_wave(&wave, grid, 0.0)?;
    let (end, frames) = run_local(start, &p, dt, s.t_end, s.frame_dt)?;
    {
        let path = run.path("frames.csv");
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(out, "t,x,u,v,w")?;
        let nodes = grid.nodes();
        for f in &frames {
            for (i, x) in nodes.iter().enumerate() {
                writeln!(
                    out,
                    "{:.6},{:.10},{:.16e},{:.16e},{:.16e}",
                    f.t, x, f.fields[0][i], f.fields[1][i], f.fields[2][i]
                )?;
            }
        }
        out.flush()?;
    }
    let speed = measure_speed(&grid, &frames, 0, s.level)?;
    let predicted = -c;
    let report = SimulateReport {
        pipeline: r.pipeline,
        params: p,
        c,
        grid: grid.into(),
        dt,
        t_end: end.t,
        persistence_error: distance_to_wave(&end, &wave, c * end.t)?,
        speed_predicted: predicted,
        speed_relative_error: ((speed.speed - predicted) / predicted).abs(),
        speed,
    };
    run.json("report.json", &report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub c: f64,
    /// `converged`, `no-wave` or `failed`.
    pub status: &'static str,
    pub converged: bool,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub rate_minus_fit: Option<f64>,
    pub rate_minus_predicted: Option<f64>,
    pub error: Option<String>,
}

fn sweep_row(r: &Resolved, c: f64) -> SweepRow {
    let mut row = SweepRow {
        c,
        status: "failed",
        converged: false,
        iterations: None,
        residual: None,
        rate_minus_fit: None,
        rate_minus_predicted: None,
        error: None,
    };
    let outcome = (|| -> Result<(usize, f64, Option<f64>)> {
        match r.sweep_system {
            SweepSystem::Kpp => {
                let a1 = r.a1()?;
                let problem = KppProblem::new(KppNonlinearity::Logistic { a1 }, c);
                row.rate_minus_predicted = kpp_minus_rate(&problem);
                let grid = r.grid_or(|h| kpp_grid(a1, c, h))?;
                let w = solve_kpp_with(&problem, &grid, &KppOptions::default())?;
                Ok((
                    w.newton_steps + w.picard_sweeps,
                    w.residual,
                    w.decay_minus.map(|f| f.rate),
                ))
            }
            SweepSystem::Lv2 | SweepSystem::Wave3 => {
                let p = if r.sweep_system == SweepSystem::Lv2 {
                    r.params_lv2()?
                } else {
                    r.params()?
                };
                row.rate_minus_predicted = rates(&p, c)?.lambda_minus;
                let grid = r.grid_or(|h| wave_grid(&p, c, h))?;
                let wave = if r.sweep_system == SweepSystem::Lv2 {
                    solve_lv2(&p, c, &grid, &r.pair_options(), &r.iteration())?.1
                } else {
                    solve_wave3(&p, c, &grid, &r.pair_options(), &r.iteration())?.wave
                };
                let fit = wave.decay_minus[0].as_ref().map(|f| f.rate);
                Ok((wave.iterations, wave.max_residual(), fit))
            }
        }
    })();
    match outcome {
        Ok((iterations, residual, fit)) => {
            row.status = "converged";
            row.converged = true;
            row.iterations = Some(iterations);
            row.residual = Some(residual);
            row.rate_minus_fit = fit;
        }
        Err(e) => {
            if matches!(e, Error::NoMonotoneWave { .. }) {
                row.status = "no-wave";
            }
            if let Error::MaxItersExceeded { iterations, .. } = &e {
                row.iterations = Some(*iterations);
            }
            row.error = Some(e.to_string());
        }
    }
    row
}

/// Worker count: `TRICOMP_THREADS` if set, else the available parallelism,
/// never more than `jobs`.
pub fn worker_count(jobs: usize) -> Result<usize> {
    let cap = match std::env::var("TRICOMP_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("TRICOMP_THREADS must be a positive integer, got {s:?}")))?,
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    Ok(cap.min(jobs).max(1))
}

/// Runs every speed through [`sweep_row`] on a scoped worker pool; rows come
/// back in input order.
pub fn run_sweep(r: &Resolved) -> Result<Vec<SweepRow>> {
    let jobs = r.speeds.len();
    let workers = worker_count(jobs)?;
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<SweepRow>>> = (0..jobs).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= jobs {
                    break;
                }
                let row = sweep_row(r, r.speeds[k]);
                *slots[k].lock().unwrap() = Some(row);
            });
        }
    });
    Ok(slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every row is filled"))
        .collect())
}

#[derive(Serialize)]
struct SweepReport<'a> {
    pipeline: Pipeline,
    system: SweepSystem,
    rows: &'a [SweepRow],
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

fn sweep_pipeline(r: &Resolved, run: &mut Run) -> Result<()> {
    let rows = run_sweep(r)?;
    {
        let path = run.path("summary.csv");
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(
            out,
            "c,status,converged,iterations,residual,rate_minus_fit,rate_minus_predicted"
        )?;
        for row in &rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.c,
                row.status,
                row.converged,
                row.iterations.map(|i| i.to_string()).unwrap_or_default(),
                opt(row.residual),
                opt(row.rate_minus_fit),
                opt(row.rate_minus_predicted)
            )?;
        }
        out.flush()?;
    }
    run.json(
        "report.json",
        &SweepReport {
            pipeline: r.pipeline,
            system: r.sweep_system,
            rows: &rows,
        },
    )
}

#[derive(Serialize)]
struct KernelReport {
    pipeline: Pipeline,
    tau: f64,
    time_horizon: f64,
    grid: GridInfo,
    quadrature_step: f64,
    mass: f64,
    mass_in_range: bool,
    /// Residual of `w_t = w_xx + (v - w)/tau` for `w = g**v` at the
    /// quadrature step and at half of it.
    identity_residual: f64,
    identity_residual_refined: f64,
    refinement_decreases: bool,
    /// Same residual for `v = 1`, where `g**v` equals the mass.
    constant_residual: f64,
}

/// Smooth test history for the identity check.
pub fn kernel_test_history(x: f64, s: f64) -> f64 {
    0.2 + 0.6 * (-(x * x) / 16.0).exp() * (1.0 + 0.3 * (s / 5.0).sin())
}

fn kernel_pipeline(r: &Resolved, run: &mut Run) -> Result<()> {
    let tau = r.tau.ok_or_else(|| Error::Config("parameter tau is required".into()))?;
    let k = r.kernel;
    let grid = Grid::with_max_spacing(k.half_width, k.h)?;
    let kernel = KernelSpec::new(tau, k.ds)?;
    let fine = KernelSpec::new(tau, k.ds / 2.0)?;
    let t0 = -(kernel.time_horizon + 4.0 * k.ds);
    let residual = |spec: &KernelSpec, f: &dyn Fn(f64, f64) -> f64| {
        let hist = VHistory::from_fn(grid, t0, 0.0, spec.quadrature_step, f);
        convolution_identity_check(&hist, spec, 3)
    };
    let coarse = residual(&kernel, &kernel_test_history)?;
    let refined = residual(&fine, &kernel_test_history)?;
    let constant = residual(&kernel, &|_, _| 1.0)?;
    let mass = kernel.mass();
    run.json(
        "report.json",
        &KernelReport {
            pipeline: r.pipeline,
            tau,
            time_horizon: kernel.time_horizon,
            grid: grid.into(),
            quadrature_step: k.ds,
            mass,
            mass_in_range: (0.9999..=1.0).contains(&mass),
            identity_residual: coarse,
            identity_residual_refined: refined,
            refinement_decreases: refined < coarse,
            constant_residual: constant,
        },
    )
}
