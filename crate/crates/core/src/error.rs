use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    // binary embedding format
    #[error("bad magic bytes: expected \"GMVP\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated stream while reading {context}")]
    Truncated { context: &'static str },
    #[error("non-finite component in vector for '{id}'")]
    NonFinite { id: String },
    #[error("duplicate utterance id '{0}'")]
    DuplicateId(String),
    #[error("utterance id is not valid UTF-8")]
    InvalidId,
    #[error("utterance id '{0}' is empty or longer than 65535 bytes")]
    IdLength(String),
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    // text formats
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown utterance id '{0}'")]
    UnknownId(String),
    #[error("views disagree on utterance ids or ordering (view {0})")]
    ViewMismatch(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid parameter {name}: {message}")]
    InvalidParam { name: &'static str, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            message: message.into(),
        }
    }
}
