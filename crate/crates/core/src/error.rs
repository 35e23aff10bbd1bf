use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: output extent along {axis} would be {extent}")]
    NonPositiveExtent {
        op: &'static str,
        axis: &'static str,
        extent: i64,
    },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("batchnorm: NaN in input channel {channel}")]
    NanInput { channel: usize },

    #[error("batchnorm: train mode needs at least 2 values per channel, got {count}")]
    BatchTooSmall { count: usize },

    #[error("computation record already consumed by a previous backward pass")]
    RecordConsumed,

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("input has {got} channels, model expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("input spatial extent {extent} along {axis} too small for stage {stage}")]
    SpatialUnderflow {
        stage: &'static str,
        axis: &'static str,
        extent: usize,
    },

    #[error("missing gradient for trainable parameter {0}")]
    MissingGradient(String),

    #[error("NaN gradient for parameter {0}")]
    NanGradient(String),

    #[error("epoch {epoch} out of range for a {epochs}-epoch schedule")]
    EpochOutOfRange { epoch: usize, epochs: usize },

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("truncated {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("unsupported {what} version {found} (reader supports {supported})")]
    Version {
        what: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("{path}:{line}: {detail}")]
    Manifest {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("stage error: expected a {expected} checkpoint, got {found}")]
    Stage { expected: String, found: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("config error: {0}")]
    RunConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
