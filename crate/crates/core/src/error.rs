//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {0} has (near) zero norm")]
    ZeroRow(usize),

    #[error("row {0} is not L2-normalized")]
    NotNormalized(usize),

    #[error("temperature must be positive and finite, got {0}")]
    NonPositiveTau(f64),

    #[error("expected a square matrix, got {rows}x{cols}")]
    NonSquareInput { rows: usize, cols: usize },

    #[error("sinkhorn regularization must be positive and finite, got {0}")]
    NonPositiveEpsilon(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("assignment row {row} sums to {sum}, expected 1")]
    RowsNotStochastic { row: usize, sum: f64 },

    #[error("prototype bank needs at least 2 prototypes, got {0}")]
    TooFewPrototypes(usize),

    #[error("tape is stale or was recorded without gradients")]
    StaleTape,

    #[error("coefficient must lie in [0, 1], got {0}")]
    CoefficientOutOfRange(f64),

    #[error("silhouette needs at least two distinct labels")]
    SingleCluster,

    #[error("empty input")]
    EmptyInput,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("k = {k} exceeds the number of points {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("degenerate specification: {0}")]
    DegenerateSpec(String),

    #[error("malformed file at {location}: {reason}")]
    MalformedFile { location: String, reason: String },

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("batch size {batch} is invalid for {available} training samples")]
    BatchTooSmall { batch: usize, available: usize },

    #[error("non-finite loss at step {step}: {diagnostic}")]
    NonFiniteLoss { step: u64, diagnostic: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short, stable name of the variant, used for machine-parsable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroRow(_) => "ZeroRow",
            Error::NotNormalized(_) => "NotNormalized",
            Error::NonPositiveTau(_) => "NonPositiveTau",
            Error::NonSquareInput { .. } => "NonSquareInput",
            Error::NonPositiveEpsilon(_) => "NonPositiveEpsilon",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::RowsNotStochastic { .. } => "RowsNotStochastic",
            Error::TooFewPrototypes(_) => "TooFewPrototypes",
            Error::StaleTape => "StaleTape",
            Error::CoefficientOutOfRange(_) => "CoefficientOutOfRange",
            Error::SingleCluster => "SingleCluster",
            Error::EmptyInput => "EmptyInput",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::DegenerateSpec(_) => "DegenerateSpec",
            Error::MalformedFile { .. } => "MalformedFile",
            Error::DimensionOverflow(_) => "DimensionOverflow",
            Error::BatchTooSmall { .. } => "BatchTooSmall",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::CorruptCheckpoint(_) => "CorruptCheckpoint",
            Error::ConfigMismatch(_) => "ConfigMismatch",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
