use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("refusing to materialize n={n} dense tensor ({bytes} bytes); limit is n={limit}")]
    TooLarge { n: usize, limit: usize, bytes: u128 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("power iteration did not converge after {iterations} iterations (relative change {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// True for failures caused by the numbers rather than by the request.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Degenerate(_) | Error::NotConverged { .. } | Error::Numerical(_)
        )
    }
}
