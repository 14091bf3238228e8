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
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    /// Malformed or inconsistent input data, with file and line context when known.
    #[error("{context}: {message}")]
    Validation { context: String, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no records")]
    NoRecords,
    #[error("empty after filtering")]
    EmptyAfterFiltering,
    #[error("insufficient blocks: need at least 2 distinct months, found {0}")]
    InsufficientBlocks(usize),
    #[error("window too short: {0}")]
    WindowTooShort(String),
    #[error("series too short: need at least {required} time steps, have {actual}")]
    SeriesTooShort { required: usize, actual: usize },
    #[error("gamma too small: diag(gamma) - P is not strictly diagonally dominant at node {node}")]
    GammaTooSmall { node: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("all grid points diverged: {0}")]
    GridDiverged(String),
    #[error("truth mismatch: {0}")]
    TruthMismatch(String),
}

impl Error {
    pub(crate) fn validation(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
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

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input files or arguments, as opposed to
    /// failures while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Csv { .. }
                | Error::Json { .. }
                | Error::Validation { .. }
                | Error::InvalidArgument(_)
                | Error::DimensionMismatch { .. }
                | Error::SeriesTooShort { .. }
                | Error::WindowTooShort(_)
                | Error::TruthMismatch(_)
        )
    }
}
