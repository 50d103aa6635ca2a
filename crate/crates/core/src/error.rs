use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("claim {claim_id}: required modality `{modality}` is unavailable")]
    Availability { claim_id: String, modality: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("line {line}: {path}: {message}")]
    Parse {
        line: usize,
        path: String,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint config mismatch: file holds `{found}`, expected `{expected}`")]
    ConfigMismatch { expected: String, found: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
