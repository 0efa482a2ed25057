use std::path::PathBuf;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("empty input")]
    EmptyInput,
    #[error("insufficient samples: need {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    Numeric(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("step {step} outside schedule of {total} steps")]
    InvalidStep { step: usize, total: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("band mismatch: model expects [{expected_lo}, {expected_hi}] Hz, slice covers [{got_lo}, {got_hi}] Hz")]
    BandMismatch {
        expected_lo: f64,
        expected_hi: f64,
        got_lo: f64,
        got_hi: f64,
    },
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("pool mismatch: {0}")]
    PoolMismatch(String),
    #[error("empty pool")]
    EmptyPool,
    #[error("aggregation heads have no trainable parameters")]
    NotTrainable,
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("score set needs at least one bonafide and one deepfake entry")]
    DegenerateLabels,
    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
