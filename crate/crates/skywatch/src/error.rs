//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Filesystem failure, tagged with the offending path.
    Io { path: PathBuf, source: std::io::Error },
    /// An image file could not be decoded or has unusable contents.
    Image { path: PathBuf, message: String },
    /// A text or binary artifact (CSV, config, model file) is malformed.
    Format { path: PathBuf, message: String },
    /// A caller-supplied argument violates an operation's preconditions.
    InvalidInput(String),
    /// A model was applied to data with incompatible dimensions.
    GeometryMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Image { path: path.into(), message: message.into() }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    pub(crate) fn geometry(message: impl Into<String>) -> Self {
        Error::GeometryMismatch(message.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{}: {}", path.display(), source),
            Error::Image { path, message } => write!(f, "{}: {}", path.display(), message),
            Error::Format { path, message } => write!(f, "{}: {}", path.display(), message),
            Error::InvalidInput(message) => write!(f, "invalid input: {}", message),
            Error::GeometryMismatch(message) => write!(f, "geometry mismatch: {}", message),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
