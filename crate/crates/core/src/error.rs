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

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: non-numeric value `{value}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: duration must be strictly positive (got {value})")]
    NonPositiveDuration { row: usize, value: f64 },

    #[error("row {row}: invalid event label `{value}` (expected an integer >= 0)")]
    InvalidEvent { row: usize, value: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no observed events")]
    NoEvents,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("feature count mismatch: expected {expected}, got {got}")]
    FeatureCount { expected: usize, got: usize },

    #[error("non-finite training loss at round {round} ({model} model)")]
    NonFiniteLoss { round: usize, model: &'static str },

    #[error("no evaluable rows")]
    NoEvaluableRows,

    #[error("no comparable pairs")]
    NoComparablePairs,

    #[error("censoring calibration failed: realized rate {realized:.4}, target {target:.4}")]
    Calibration { realized: f64, target: f64 },

    #[error("unsupported {kind} version {found} (this build reads up to {supported})")]
    UnsupportedVersion {
        kind: &'static str,
        found: u32,
        supported: u32,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
