//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on operation arguments was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// Cholesky factorization failed even after diagonal regularization.
    #[error("factorization error: non-positive pivot at index {pivot} (value {value:.3e}) after jitter {jitter:.3e}")]
    Factorization {
        pivot: usize,
        value: f64,
        jitter: f64,
    },

    /// Invalid experiment or search configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent persisted data.
    #[error("data error: {0}")]
    Data(String),

    /// Numeric procedure failed to converge or produced a degenerate result.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
