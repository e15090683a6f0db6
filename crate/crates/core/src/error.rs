use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure class, used by front-ends to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad or unreadable input data.
    Data,
    /// Model/schema or configuration incompatibility.
    Schema,
    /// Numerical failure inside an algorithm.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("ragged rows: line {line} has {got} columns, header has {expected}")]
    RaggedRow {
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("label column `{0}` not found")]
    MissingLabelColumn(String),

    #[error("feature column `{0}` not found in input")]
    MissingFeatureColumn(String),

    #[error("row {row}: column `{column}` is not numeric")]
    NonNumeric { row: usize, column: String },

    #[error("fewer than 2 classes in label column")]
    TooFewClasses,

    #[error("no numeric feature columns remain")]
    NoNumericFeatures,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("too few rows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance matrix is not invertible even with ridge {ridge}; raise the ridge")]
    SingularCovariance { ridge: f64 },

    #[error("cosine distance is undefined for a zero-norm vector")]
    ZeroNorm,

    #[error("mahalanobis distance requires a covariance context")]
    MissingCovariance,

    #[error("distance gradient is singular at x = xbar with smooth_eps = 0; set smooth_eps > 0")]
    SingularGradient,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("first boosting round is no better than chance (weighted error {error:.4})")]
    NoBetterThanChance { error: f64 },

    #[error("non-finite loss or gradient at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("empty overlap between compared result sets")]
    EmptyOverlap,

    #[error("instance {index} has different originals in the compared result sets")]
    MismatchedInstance { index: usize },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Io { .. }
            | Csv { .. }
            | RaggedRow { .. }
            | MissingLabelColumn(_)
            | NonNumeric { .. }
            | TooFewClasses
            | NoNumericFeatures
            | EmptyDataset
            | TooFewRows { .. }
            | SingularCovariance { .. }
            | NoBetterThanChance { .. } => ErrorClass::Data,
            NonFinite { .. } | SingularGradient | ZeroNorm => ErrorClass::Numeric,
            _ => ErrorClass::Schema,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
