use thiserror::Error;

use crate::autodiff::TapeError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid preference order: {0}")]
    InvalidOrder(String),

    #[error("invalid preference profile: {0}")]
    InvalidProfile(String),

    #[error("invalid distribution config: {0}")]
    InvalidConfig(String),

    #[error("enumeration overflow: {what} requires {required} items but the cap allows {cap}")]
    EnumerationOverflow {
        what: &'static str,
        required: usize,
        cap: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid randomized matching: {0}")]
    InvalidMatching(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("profile {index}: {source}")]
    AtProfile {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Tape(#[from] TapeError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_profile(index: usize, source: Error) -> Self {
        Error::AtProfile {
            index,
            source: Box::new(source),
        }
    }

    /// True when the error (or the error it wraps) is a numeric failure.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric(_) => true,
            Error::Tape(TapeError::NonFinite { .. }) => true,
            Error::AtProfile { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::AtProfile { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
