use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("invalid stride {0}; stride must be at least 1")]
    InvalidStride(usize),
    #[error("invalid axis {axis} for tensor of rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("function is not deterministic: two evaluations disagree ({0} vs {1})")]
    NonDeterministicFunction(f64, f64),
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
    #[error("context mismatch: {0}")]
    ContextMismatch(String),
    #[error("camera id {id} out of range for {count} cameras")]
    InvalidCamera { id: usize, count: usize },
    #[error("displacement {index} is not positive ({value})")]
    NonPositiveDisplacement { index: usize, value: f64 },
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { found: u32, expected: u32 },
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("label count {labels} does not match image count {images}")]
    LabelCountMismatch { images: usize, labels: usize },
    #[error("malformed data: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),
    #[error("image encoding: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
