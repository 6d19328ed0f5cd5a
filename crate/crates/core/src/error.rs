use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("cannot broadcast shapes {0:?} and {1:?}")]
    Broadcast(Vec<usize>, Vec<usize>),
    #[error("inner dimensions do not match: {0:?} x {1:?}")]
    MatmulDims(Vec<usize>, Vec<usize>),
    #[error("invalid axis {axis} for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("slice out of bounds: axis {axis}, range {lo}..{hi}, extent {extent}")]
    SliceBounds { axis: usize, lo: usize, hi: usize, extent: usize },
    #[error("kernel {0}x{1} larger than padded input {2}x{3}")]
    KernelTooLarge(usize, usize, usize, usize),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("concat operands disagree off-axis: {0:?} vs {1:?}")]
    ConcatMismatch(Vec<usize>, Vec<usize>),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("non-positive depth at pixel ({0}, {1})")]
    NonPositiveDepth(usize, usize),
    #[error("matrix is not a rotation: {0}")]
    NotARotation(String),
    #[error("scaled extents not integral: {0} x {1}")]
    NonIntegralExtents(f64, f64),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("pair sampling failed after {0} attempts for bin {1}")]
    SamplingFailed(usize, String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {format} file: {reason}")]
    Format { format: String, reason: String },
    #[error("checkpoint error at offset {offset}: {reason}")]
    Checkpoint { offset: u64, reason: String },
    #[error("config error: {0}")]
    Config(String),
}
