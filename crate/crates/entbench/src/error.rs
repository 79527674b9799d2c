//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the benchmarking pipeline.
///
/// Solver outcomes such as "constraints are infeasible" or "iteration limit
/// reached" are *results*, not errors; they are reported through
/// [`crate::quant::SolverStatus`]. `EntError` covers genuinely exceptional
/// conditions: invalid arguments, malformed data files, and numerical
/// breakdown.
#[derive(Debug, Error)]
pub enum EntError {
    /// An argument is outside its documented domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Not enough data to carry out an estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A data file failed to parse; `line` is 1-based.
    #[error("malformed record at line {line}: {msg}")]
    Format { line: usize, msg: String },

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A numerical routine produced non-finite values or failed to make
    /// progress in a way that indicates a bug or ill-posed input.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type EntResult<T> = Result<T, EntError>;

impl EntError {
    /// Shorthand for an [`EntError::InvalidInput`] with a formatted message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        EntError::InvalidInput(msg.into())
    }
}
