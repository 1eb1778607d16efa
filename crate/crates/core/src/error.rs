use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped so the CLI can map them onto exit codes: usage
/// problems, data problems, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown feature identifier `{0}`")]
    UnknownFeature(String),

    #[error("negative time {time} for episode `{episode}`")]
    NegativeTime { episode: String, time: f64 },

    #[error("episode `{episode}`: {message}")]
    InconsistentEpisode { episode: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid step window: {0}")]
    Window(String),

    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("no step at or before the anchor time {anchor_s} s")]
    NoAnchor { anchor_s: f64 },

    #[error("catalog mismatch: checkpoint fingerprint {expected}, catalog fingerprint {found}")]
    CatalogMismatch { expected: String, found: String },

    #[error("unknown method `{name}`; available: {available}")]
    UnknownMethod { name: String, available: String },

    #[error("empty evaluation: no windows left after exclusions")]
    EmptyEvaluation,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } | Error::UnknownMethod { .. } => ErrorKind::Usage,
            Error::Diverged { .. } | Error::NonFinite(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config { field: field.to_string(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
