//! Error type shared across the simulator.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Tensor or layer shapes do not line up; `detail` names the offending
    /// dimension.
    ShapeMismatch { op: &'static str, detail: String },
    /// An argument violated an operation's precondition.
    InvalidArgument { op: &'static str, detail: String },
    /// A configuration failed validation before any work started.
    InvalidConfig(String),
    /// A serialized artifact (checkpoint, stream dump) failed to decode.
    Corrupt(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Error::InvalidArgument { op, detail } => write!(f, "{op}: invalid argument: {detail}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::Corrupt(msg) => write!(f, "corrupt data: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch { op, detail: detail.into() }
}

pub(crate) fn arg_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::InvalidArgument { op, detail: detail.into() }
}
