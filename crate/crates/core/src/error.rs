use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed data: {0}")]
    Data(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 usage, 3 data, 4 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) => 2,
            Error::Parse { .. } | Error::Data(_) | Error::Io { .. } => 3,
            Error::State(_) | Error::DegenerateBatch(_) => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
