use thiserror::Error;

use crate::system_waves::WaveSolution;

/// Which side of the upper/lower inequalities a verification failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Upper,
    Lower,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "central differencing loses diagonal dominance: |c|h/2 = {lhs} >= 1 + beta h^2/2 = {rhs}; refine the grid"
    )]
    Stability { lhs: f64, rhs: f64 },

    #[error("singular tridiagonal system: pivot {pivot:e} at row {row}")]
    SingularMatrix { row: usize, pivot: f64 },

    #[error("profiles are defined on different grids")]
    GridMismatch,

    #[error("no monotone wave below c_min = 2*sqrt(1 - a1) = {c_min}: requested c = {c}")]
    NoMonotoneWave { c: f64, c_min: f64 },

    #[error("nonlinear solve did not converge after {iterations} steps (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("monotone iteration hit the cap of {iterations} sweeps (last difference {last_diff:e})")]
    MaxItersExceeded {
        iterations: usize,
        last_diff: f64,
        best: Box<WaveSolution>,
    },

    #[error("iterate {iteration} left the [lower, upper] band at node {node}, component {component} by {excess:e}")]
    SandwichViolation {
        iteration: usize,
        node: usize,
        component: usize,
        excess: f64,
    },

    #[error("regime error: {0}")]
    Regime(String),

    #[error("{bound:?} solution inequality fails at node {node}, component {component}: operator value {value:e}")]
    Verification {
        bound: Bound,
        component: usize,
        node: usize,
        value: f64,
    },

    #[error("a2*u >= v fails on the two-species wave: min(a2 u - v) = {min_value:e} at node {node}")]
    H3Unsatisfied { min_value: f64, node: usize },

    #[error("no shift up to {max_shift} orders the upper solution above the lower one")]
    OrderingFailure { max_shift: f64 },

    #[error("precondition failed: {0}")]
    PreconditionFailure(String),

    #[error("tail fit window holds {nodes} nodes, at least {required} needed")]
    TailTooShort { nodes: usize, required: usize },

    #[error("simulation left the admissible band at t = {t}, node {node} (value {value})")]
    BlowUp { t: f64, node: usize, value: f64 },

    #[error("history covers [{available_from}, {until}] but [{needed_from}, {until}] is required")]
    InsufficientHistory {
        available_from: f64,
        needed_from: f64,
        until: f64,
    },

    #[error("level {level} is not crossed in frame {frame}")]
    NoCrossing { frame: usize, level: f64 },

    #[error("level {level} is crossed {crossings} times in frame {frame}")]
    NonMonotoneFront { frame: usize, level: f64, crossings: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) => 2,
            Error::InvalidParameter(_)
            | Error::Stability { .. }
            | Error::NoMonotoneWave { .. }
            | Error::Regime(_)
            | Error::Verification { .. }
            | Error::H3Unsatisfied { .. }
            | Error::OrderingFailure { .. }
            | Error::PreconditionFailure(_)
            | Error::GridMismatch
            | Error::InsufficientHistory { .. } => 3,
            Error::SingularMatrix { .. }
            | Error::ConvergenceFailure { .. }
            | Error::MaxItersExceeded { .. }
            | Error::SandwichViolation { .. }
            | Error::TailTooShort { .. }
            | Error::BlowUp { .. }
            | Error::NoCrossing { .. }
            | Error::NonMonotoneFront { .. } => 4,
        }
    }

    /// Short machine-readable tag for reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Stability { .. } => "stability",
            Error::SingularMatrix { .. } => "singular_matrix",
            Error::GridMismatch => "grid_mismatch",
            Error::NoMonotoneWave { .. } => "no_monotone_wave",
            Error::ConvergenceFailure { .. } => "convergence_failure",
            Error::MaxItersExceeded { .. } => "max_iters_exceeded",
            Error::SandwichViolation { .. } => "sandwich_violation",
            Error::Regime(_) => "regime",
            Error::Verification { .. } => "verification",
            Error::H3Unsatisfied { .. } => "h3_unsatisfied",
            Error::OrderingFailure { .. } => "ordering_failure",
            Error::PreconditionFailure(_) => "precondition_failure",
            Error::TailTooShort { .. } => "tail_too_short",
            Error::BlowUp { .. } => "blow_up",
            Error::InsufficientHistory { .. } => "insufficient_history",
            Error::NoCrossing { .. } => "no_crossing",
            Error::NonMonotoneFront { .. } => "non_monotone_front",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
