use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} values, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("non-finite value at {0}")]
    NonFiniteValue(String),
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("upsampling requested: target {target} fps exceeds source {source_fps} fps")]
    UpsampleRequested { source_fps: f64, target: f64 },
    #[error("degenerate frame: all landmarks coincide")]
    DegenerateFrame,
    #[error("too few subjects: {subjects} distinct subjects for {folds} folds")]
    TooFewSubjects { subjects: usize, folds: usize },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("csv parse error at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("feature width {d} is not divisible by {heads} heads")]
    IndivisibleHeads { d: usize, heads: usize },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("k = {k} out of range for {n} items")]
    KOutOfRange { k: usize, n: usize },
    #[error("curve count {c} out of range for {n} landmarks")]
    COutOfRange { c: usize, n: usize },
    #[error("no curves to aggregate")]
    NoCurves,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty training set")]
    EmptyTrainSet,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("subject leakage between train and test: {0}")]
    SubjectLeakage(String),
    #[error("degenerate variance: all paired differences equal {0}")]
    DegenerateVariance(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("unknown configuration key `{0}`")]
    UnknownConfigKey(String),
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
