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

    /// Malformed or inconsistent dataset content, located by file and line.
    #[error("{file}:{line}: {message}")]
    Data {
        file: String,
        line: usize,
        message: String,
    },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error in {op}: {message}")]
    Domain { op: &'static str, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },

    #[error("{0}")]
    Empty(&'static str),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl Error {
    pub(crate) fn data(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Data {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric failure, 5 verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. }
            | Error::Data { .. }
            | Error::Graph(_)
            | Error::Checkpoint(_)
            | Error::Shape { .. }
            | Error::Empty(_) => 3,
            Error::NonFinite { .. } | Error::Domain { .. } => 4,
            Error::Verification(_) => 5,
        }
    }
}
