use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain on which an operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    /// A linear-algebra or filtering step produced an unusable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model blow-up: non-finite state at t = {time} s")]
    BlowUp { time: f64 },

    /// A cycled experiment failed; `source` is the underlying cause.
    #[error("cycle {cycle} failed: {source}")]
    Cycle { cycle: usize, source: Box<Error> },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
