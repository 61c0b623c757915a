use std::path::PathBuf;

use thiserror::Error;

use crate::sketch::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid sketch: {}", join_violations(.0))]
    Validation(Vec<Violation>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("capacity exceeded: {count} targets for {capacity} queries")]
    Capacity { count: usize, capacity: usize },

    #[error("problem too large for exhaustive search: {0} rows (max 8)")]
    TooLarge(usize),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("{path}: line {line}: {message}")]
    Corpus {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
