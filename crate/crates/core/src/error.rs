use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid crop plan: {0}")]
    InvalidPlan(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The backend cannot do what was asked (e.g. feature fusion on a logits-only model).
    #[error("capability error: {0}")]
    Capability(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("model runtime error: {0}")]
    Runtime(String),

    #[error("failed to decode {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn invalid_plan(msg: impl Into<String>) -> Self {
        Error::InvalidPlan(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by user-supplied configuration rather than data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Capability(_)
                | Error::ShapeMismatch(_)
                | Error::MissingFile(_)
                | Error::Runtime(_)
                | Error::InvalidPlan(_)
        )
    }
}
