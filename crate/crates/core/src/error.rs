use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or feature shapes do not fit together.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller violated an operation precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// Inconsistent or unknown configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("input error: {path}: {msg}")]
    Input { path: PathBuf, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed checkpoint or tensor file.
    #[error("format error: {0}")]
    Format(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Training produced a non-finite loss.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Short machine-readable kind, e.g. `config`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Capacity(_) => "capacity",
            Error::Input { .. } => "input",
            Error::Validation(_) => "validation",
            Error::Format(_) => "format",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::Numeric(_) => "numeric",
            Error::Io(_) => "io",
        }
    }
}
