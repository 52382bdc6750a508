//! Crate-wide error type.
//!
//! Errors split into two broad families that the CLI maps to exit codes:
//! input/validation problems (bad config, malformed data, inconsistent
//! bounds) and numerical failures (non-converging fits, degenerate
//! systems). IO and parse errors from the underlying readers are wrapped.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad input: config, data, or an argument violates a precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A numerical procedure failed (rank deficiency, non-convergence, ...).
    #[error("numerical error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}
