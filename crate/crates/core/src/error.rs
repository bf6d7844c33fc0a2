//! Error type shared by all simsift-core modules.

use std::path::PathBuf;
use thiserror::Error;

/// Coarse category used by callers to map errors onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad inputs, violated invariants, malformed records.
    Validation,
    /// Filesystem problems: missing files, read/write failures.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}:{line}: {reason}", path.display())]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("{}: bad magic, not an EMB1 file", path.display())]
    BadMagic { path: PathBuf },

    #[error("{}: unsupported EMB1 version {version}", path.display())]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("{}: truncated or oversized payload: {reason}", path.display())]
    TruncatedPayload { path: PathBuf, reason: String },

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("zero-norm vector")]
    ZeroNormVector,

    #[error("zero-norm row for id {id:?}")]
    ZeroNormRow { id: String },

    #[error("digest mismatch: expected {expected}, got {actual}")]
    DigestMismatch { expected: String, actual: String },

    #[error("embedding specs differ: {0}")]
    SpecMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::MissingFile { .. } | Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
