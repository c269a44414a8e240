use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated planes: expected {expected} bytes of payload, found {found}")]
    TruncatedPlanes { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("wrong range tag: expected {expected}, found {found}")]
    RangeTag { expected: String, found: String },

    #[error("dimension error: {0}")]
    Dimensions(String),

    #[error("backward already consumed this graph; run a fresh forward pass")]
    GraphConsumed,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("non-finite loss at step {step} (batch {batch})")]
    NanLoss { step: u64, batch: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("image encoding error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parseable category, used by the CLI and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedHeader(_) => "malformed_header",
            Error::TruncatedPlanes { .. } => "truncated_planes",
            Error::NonFinite(_) => "non_finite",
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::RangeTag { .. } => "range_tag",
            Error::Dimensions(_) => "dimensions",
            Error::GraphConsumed => "graph_consumed",
            Error::Checkpoint(_) => "checkpoint",
            Error::Manifest(_) => "manifest",
            Error::NanLoss { .. } => "nan_loss",
            Error::Protocol(_) => "protocol",
            Error::Image(_) => "image",
        }
    }
}
