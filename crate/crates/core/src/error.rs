use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FasaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FasaError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Malformed binary tensor file. `field` names the offending header field.
    #[error("format error in {field}: {message}")]
    Format { field: &'static str, message: String },

    /// A structured artifact failed validation. `path` is a JSON-pointer-like
    /// location of the offending value.
    #[error("validation error at {path}: {message}")]
    Validation { path: String, message: String },

    #[error("head {head}: {source}")]
    Head {
        head: String,
        #[source]
        source: Box<FasaError>,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FasaError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Self::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Self::InvalidState(msg.into())
    }

    pub(crate) fn validation(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Self::Validation {
            path: path.into(),
            message: msg.into(),
        }
    }
}
