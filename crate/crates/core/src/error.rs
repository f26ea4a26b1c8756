use thiserror::Error;

use crate::planner::SearchStats;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mode {mode} out of range 1..={mode_count}")]
    ModeOutOfRange { mode: usize, mode_count: usize },

    #[error("state has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite state at step {step}: {state:?}")]
    NumericalOverflow { step: usize, state: Vec<f64> },

    #[error("non-finite state during expansion {}: {state:?}", stats.nodes_expanded)]
    PlanOverflow { stats: SearchStats, state: Vec<f64> },

    #[error("closed loop failed at step {step}: {source}")]
    ClosedLoop {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("system validation failed: {0}")]
    InvalidSystem(String),

    #[error("integer overflow computing {0}")]
    IntegerOverflow(String),

    #[error("enumeration of {count} sequences exceeds cap {cap}")]
    ResourceCap { count: String, cap: u64 },

    #[error("invalid comparison function: {0}")]
    InvalidComparison(String),

    #[error("no inversion bracket for y = {y} after {doublings} doublings")]
    InversionRange { y: f64, doublings: u32 },

    #[error("comparison iteration diverged at step {step} (value {value})")]
    Divergence { step: usize, value: f64 },

    #[error("gamma_star = {gamma_star} is infeasible, must exceed {threshold}")]
    Infeasible { gamma_star: f64, threshold: f64 },

    #[error("envelope fit failed: {0}")]
    Fit(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable identifier, used in the machine-readable error line of the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ModeOutOfRange { .. } => "mode_out_of_range",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NumericalOverflow { .. } => "numerical_overflow",
            Error::PlanOverflow { .. } => "plan_overflow",
            Error::ClosedLoop { source, .. } => source.kind(),
            Error::Precondition(_) => "precondition",
            Error::InvalidSystem(_) => "invalid_system",
            Error::IntegerOverflow(_) => "integer_overflow",
            Error::ResourceCap { .. } => "resource_cap",
            Error::InvalidComparison(_) => "invalid_comparison",
            Error::InversionRange { .. } => "inversion_range",
            Error::Divergence { .. } => "divergence",
            Error::Infeasible { .. } => "infeasible",
            Error::Fit(_) => "fit",
            Error::Config(_) => "config",
            Error::UnknownSystem(_) => "unknown_system",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
