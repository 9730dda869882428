use thiserror::Error;

/// Errors raised by the tapering toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("{what} needs {needed} entries, over the configured cap of {cap}")]
    Size {
        what: &'static str,
        needed: usize,
        cap: usize,
    },

    /// Nonpositive pivot during Cholesky factorization. `column` is the index in
    /// the original (unpermuted) stacking.
    #[error("matrix is not positive definite (pivot failed at column {column})")]
    NotPositiveDefinite { column: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
