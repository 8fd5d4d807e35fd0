use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("invalid {field}: {msg}")]
    Validation { field: String, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no pose for frame at timestamp {timestamp}")]
    MissingPose { timestamp: f64 },

    #[error("frame {index} (timestamp {timestamp}): {source}")]
    Frame {
        index: usize,
        timestamp: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn parse(path: impl AsRef<Path>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.as_ref().to_path_buf(), line, msg: msg.into() }
    }

    pub fn format(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.as_ref().to_path_buf(), msg: msg.into() }
    }

    pub fn validation(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), msg: msg.into() }
    }

    /// Process exit code: 2 for broken internal invariants, 1 for everything
    /// caused by inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 2,
            Error::Frame { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
