use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("unknown parameter name pattern: {0}")]
    UnknownParam(String),

    #[error("checkpoint incompatible with model: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at update {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { path: path.into(), msg: msg.into() }
    }

    /// Prefixes the field path of a config error; other errors pass through.
    pub fn at(self, prefix: &str) -> Self {
        match self {
            Error::Config { path, msg } => Error::Config { path: format!("{prefix}.{path}"), msg },
            e => e,
        }
    }
}
