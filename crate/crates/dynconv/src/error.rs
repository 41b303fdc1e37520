//! Error type shared across the crate.

use std::fmt;
use std::path::PathBuf;

/// Everything that can go wrong inside the library.
///
/// `Shape` is a runtime mismatch between tensors or between a tensor and an
/// operation's contract; `InvalidConfig` is a bad hyperparameter or
/// constructor argument; `Io` wraps checkpoint/fixture file problems with the
/// offending path attached.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    Shape {
        context: &'static str,
        detail: String,
    },
    InvalidConfig {
        context: &'static str,
        detail: String,
    },
    Io {
        path: PathBuf,
        detail: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            context,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(context: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidConfig {
            context,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, detail: impl fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            detail: detail.to_string(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { context, detail } => write!(f, "shape error in {context}: {detail}"),
            Error::InvalidConfig { context, detail } => {
                write!(f, "invalid config in {context}: {detail}")
            }
            Error::Io { path, detail } => write!(f, "io error at {}: {detail}", path.display()),
        }
    }
}

impl std::error::Error for Error {}
