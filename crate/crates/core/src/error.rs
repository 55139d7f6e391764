use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// Structurally valid input that breaks a format rule (manifest fields, byte lengths).
    #[error("format: {0}")]
    Format(String),

    /// Input that violates a documented precondition or invariant.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("too few rows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the CLI error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json { .. } | Error::Csv { .. } | Error::Format(_) => "format",
            Error::Invalid(_) => "invalid-input",
            Error::EmptyGroup(_) => "empty-group",
            Error::TooFewRows { .. } => "too-few-rows",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Json { .. } | Error::Csv { .. } | Error::Format(_) => 3,
            Error::Invalid(_) => 4,
            Error::EmptyGroup(_) | Error::TooFewRows { .. } => 5,
        }
    }
}
