use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0} is not a prime in [2, 2^31 - 1]")]
    NotPrime(u64),

    #[error("attempted to invert zero in GF({0})")]
    ZeroInverse(u32),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range (count {count})")]
    OutOfRange { index: u64, count: u64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("covering for ({v},{k},{t}) exceeds the cap of {cap} blocks")]
    CapExceeded { v: usize, k: usize, t: usize, cap: usize },

    #[error("no covering for ({v},{k},{t}) in the database")]
    NotFound { v: usize, k: usize, t: usize },

    #[error("malformed covering file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("covering does not cover the {t}-subset {subset:?}")]
    NotCovering { t: usize, subset: Vec<u32> },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no candidate design found; consider lowering min_k or raising eps")]
    NoCandidates,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParams(msg.into())
    }
}
