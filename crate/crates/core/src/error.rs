use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error(
        "sample-count mismatch: header declares {declared} samples but raw data holds {found}"
    )]
    SampleCountMismatch { declared: usize, found: String },

    #[error("invalid recording: {0}")]
    InvalidRecording(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible seizure layout: {0}")]
    InfeasibleLayout(String),

    #[error("filter design error: {0}")]
    FilterDesign(String),

    #[error("not enough seizures: {0}")]
    NotEnoughSeizures(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("out-of-order timestamp: expected {expected}, got {found}")]
    OutOfOrder { expected: f64, found: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing network: {0}")]
    MissingNetwork(String),

    #[error("external hook failed: {0}")]
    Hook(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
