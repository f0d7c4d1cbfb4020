use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("region file error: {0}")]
    Region(String),

    #[error("no candidate regions")]
    NoRegions,

    #[error("region selection failed: {0}")]
    Selection(String),

    #[error("image i/o on {path}: {message}")]
    ImageIo { path: PathBuf, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bridge transport error: {0}")]
    Transport(String),

    #[error("bridge protocol error: {0}")]
    Protocol(String),

    #[error("remote encoder error: {0}")]
    Remote(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the encoder bridge (connection, framing or remote side).
    pub fn is_transport(&self) -> bool {
        matches!(self, Error::Transport(_) | Error::Protocol(_) | Error::Remote(_))
    }
}
