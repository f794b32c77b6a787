use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("clustering error: {0}")]
    Cluster(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("missing description for class {0}")]
    MissingDescription(u32),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("requested {shots} shots but class {class} only has {available} samples")]
    ShotOverflow {
        shots: usize,
        class: u32,
        available: usize,
    },

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("ingest error in {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },

    #[error("no records to report")]
    EmptyReport,

    #[error("experiment {fingerprint} failed: {source}")]
    Experiment {
        fingerprint: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn ingest(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Innermost error, looking through experiment wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Experiment { source, .. } => source.root(),
            other => other,
        }
    }
}
