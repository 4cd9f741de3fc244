use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector has zero norm")]
    ZeroVector,

    #[error("vector contains a non-finite entry at index {0}")]
    NonFinite(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("parameter shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("bad magic bytes in feature file")]
    BadMagic,

    #[error("unsupported feature file version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: u64, actual: u64 },

    #[error("trailing bytes: expected {expected} bytes, found {actual}")]
    TrailingBytes { expected: u64, actual: u64 },

    #[error("label {label} out of range for K={classes}")]
    LabelOutOfRange { label: i32, classes: usize },

    #[error("invalid classifier bank: {0}")]
    BadBank(String),

    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("invalid synthetic stream spec: {0}")]
    BadSpec(String),

    #[error("insufficient records: ratio {ratio} needs {needed} OOD records, {available} available")]
    InsufficientRecords {
        ratio: f64,
        needed: usize,
        available: usize,
    },

    #[error("score queue is empty")]
    EmptyQueue,

    #[error("empty batch")]
    EmptyBatch,

    #[error("noise bank is empty")]
    EmptyBank,

    #[error("injected record passed to metric accumulation")]
    InjectedRecord,

    #[error("ranking metric needs both clean and noisy samples")]
    OneClassOnly,

    #[error("decision log is empty")]
    EmptyLog,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
