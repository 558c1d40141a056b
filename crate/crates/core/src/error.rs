use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is too small to normalize")]
    ZeroNorm { norm: f64 },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("empty vector")]
    EmptyVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("distribution support mismatch: {left} vs {right}")]
    SupportMismatch { left: usize, right: usize },
    #[error("vector is not unit norm (norm = {norm})")]
    NotNormalized { norm: f64 },
    #[error("queue is empty")]
    EmptyQueue,
    #[error("batch of {batch} does not fit queue capacity {capacity}")]
    BatchTooLarge { batch: usize, capacity: usize },
    #[error("queue position {position} is invalid for a support of size {support}")]
    PositionInvalid { position: usize, support: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("non-finite loss or parameter at step {step}: loss = {loss}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("channel {0} is assigned to both accelerometer and gyroscope")]
    ChannelOverlap(usize),
    #[error("channel {0} is assigned to neither accelerometer nor gyroscope")]
    ChannelUncovered(usize),
    #[error("sensitivity coefficient must be positive, got {0}")]
    NonPositiveCoefficient(f64),
    #[error("signal of length {0} is too short to resample (need at least 2)")]
    TooShort(usize),
    #[error("could not place {num_classes} anchors in {dim} dimensions with pairwise dot <= {max_dot}")]
    RejectionOverflow {
        num_classes: usize,
        dim: usize,
        max_dot: f64,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("file is truncated")]
    TruncatedFile,
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("class {0} has no training samples")]
    MissingClass(usize),
    #[error("kernel matrix is not positive definite; increase the ridge lambda")]
    SingularKernel,
    #[error("probe has not been fitted")]
    NotFitted,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
