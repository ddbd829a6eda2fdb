//! Shared error type for the whole crate.

use thiserror::Error;

/// Errors produced by linear algebra, kernel, network, data, and training code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("sample error: {0}")]
    Sample(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("label out of range: {0}")]
    Label(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
