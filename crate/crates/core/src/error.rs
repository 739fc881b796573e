use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("row {row} is not a probability distribution (sum {sum})")]
    NotRowStochastic { row: usize, sum: f64 },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid hyperparameter `{name}`: {reason}")]
    InvalidHyperparameter { name: &'static str, reason: String },

    #[error("perplexity calibration failed at row {row}: {reason}")]
    CalibrationFailed { row: usize, reason: String },

    #[error("optimizer diverged at iteration {iteration} (non-finite coordinate)")]
    NonFiniteUpdate { iteration: usize },

    #[error("run at alpha={alpha} failed: {source}")]
    SweepFailed {
        alpha: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid neighbourhood size k={k} for n={n}")]
    InvalidK { k: usize, n: usize },

    #[error("class consistency needs at least two distinct labels")]
    SingleClass,

    #[error("training labels contain fewer than two classes")]
    SingleClassTrainingSet,

    #[error("empty evaluation set")]
    EmptySet,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("file is empty")]
    EmptyFile,

    #[error("invalid model blob: {0}")]
    InvalidModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
