use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used in the CLI error document.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParam(_) => "invalid_param",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::Shape(_) => "shape",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
