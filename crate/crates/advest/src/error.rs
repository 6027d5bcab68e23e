//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Parameter value the model deliberately does not support.
    #[error("unsupported parameter: {0}")]
    UnsupportedParameter(String),

    /// Panel data that violates the wave layout or padding conventions.
    #[error("malformed panel: {0}")]
    MalformedPanel(String),

    /// Matrix/vector dimensions that do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration; the message carries the offending path.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
