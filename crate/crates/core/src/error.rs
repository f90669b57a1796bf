use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by model construction, file loading and problem validation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected dimension {expected}, got {got}")]
    InputShape { expected: usize, got: usize },

    #[error("dimension chain broken at layer {layer}: {detail}")]
    DimensionChain { layer: usize, detail: String },

    #[error("non-finite value in {location}")]
    NonFinite { location: String },

    #[error("failed to parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }
}
