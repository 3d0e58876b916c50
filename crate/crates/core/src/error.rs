use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate reflector: |v| = {norm:e} is not above the floor {floor:e}")]
    DegenerateReflector { norm: f64, floor: f64 },

    #[error("matrix is not orthogonal: max |UU^T - I| = {max_deviation:e}")]
    NotOrthogonal { max_deviation: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("parameter shape mismatch: expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("trace does not match the model: {0}")]
    TraceMismatch(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: vector has {found} entries, header declares {expected}")]
    DimMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },

    #[error("dataset contains no records")]
    EmptyDataset,

    #[error("class `{0}` has no records")]
    EmptyClass(String),

    #[error("class `{class}` has {available} records, episode needs {required}")]
    InsufficientSamples {
        class: String,
        available: usize,
        required: usize,
    },

    #[error("seen and novel class sets overlap on `{0}`")]
    OverlappingSplits(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failure at run time.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::Parse { .. }
                | Error::DimMismatch { .. }
                | Error::UnknownLabel { .. }
                | Error::EmptyDataset
                | Error::EmptyClass(_)
                | Error::InsufficientSamples { .. }
                | Error::OverlappingSplits(_)
                | Error::DimensionMismatch { .. }
                | Error::Checkpoint(_)
        )
    }
}
