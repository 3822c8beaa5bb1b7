use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("not a point of the probability simplex: {0}")]
    NotASimplexPoint(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("row {row} is not a probability distribution (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },
    #[error("observation {obs} has zero likelihood under the prior")]
    ZeroLikelihood { obs: usize },
    #[error("action {action} has zero probability under the prior")]
    ImpossibleAction { action: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate incentive parameters: {0}")]
    DegenerateParams(String),
    #[error("environment {env} has no samples for state {state}")]
    EmptyCell { env: usize, state: usize },
    #[error("at least two environments are required, got {0}")]
    TooFewEnvironments(usize),
    #[error("no utility reconstruction with a positive margin exists (best margin {margin})")]
    ReconstructionInfeasible { margin: f64 },
    #[error("linear program: {0}")]
    Lp(#[from] crate::lp::LpError),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("value iteration did not converge after {sweeps} sweeps (last change {delta})")]
    NonConvergence { sweeps: usize, delta: f64 },
    #[error("replay data for state {state} is exhausted")]
    ReplayExhausted { state: usize },
    #[error("remote sensor: {0}")]
    RemoteError(String),
    #[error("state {state} has no labelled samples")]
    EmptyState { state: usize },
    #[error("invalid schedule at event {index}: {reason}")]
    InvalidSchedule { index: usize, reason: String },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }
}
