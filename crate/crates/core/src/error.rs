use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate covariance: Cholesky failed even with jitter {jitter:e}")]
    DegenerateCovariance { jitter: f64 },

    #[error("simulation diverged at t={time} (|value| = {magnitude:e})")]
    SimulationDiverged { time: i64, magnitude: f64 },

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    TrainingDiverged {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("column {column} is constant")]
    DegenerateColumn { column: usize },

    #[error("degenerate design matrix: {0}")]
    DegenerateDesign(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("data error at line {line}: {detail}")]
    Data { line: u64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
