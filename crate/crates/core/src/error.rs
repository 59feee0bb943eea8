use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("dataset has no instances")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("query error: {0}")]
    Query(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("linear system for label {label} is numerically singular (condition estimate {condition:.3e})")]
    Singular { label: usize, condition: f64 },

    #[error("solver diverged: {message}; objective trace {trace:?}")]
    Divergence { message: String, trace: Vec<f64> },

    #[error("empty candidate pool")]
    EmptyPool,

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
