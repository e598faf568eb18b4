use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GplError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GplError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{id}` in {what}")]
    DuplicateKey { what: &'static str, id: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown id `{id}` in {what}")]
    UnknownId { what: &'static str, id: String },

    #[error("missing artifact for stage `{stage}`: {detail}; run `{upstream}` first")]
    MissingArtifact {
        stage: String,
        upstream: String,
        detail: String,
    },

    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl GplError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GplError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        GplError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
