use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the deviating-mixture toolkit.
///
/// The split between [`Error::Input`] and [`Error::Numerical`] is what the CLI
/// maps onto exit codes 1 and 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the caller's data or configuration.
    pub fn is_input(&self) -> bool {
        matches!(self, Error::Input(_) | Error::Io { .. } | Error::Format { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
