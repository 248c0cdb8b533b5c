//! Dense `f64`/`i64` tensors, a reverse-mode gradient tape, the Adam
//! optimizer and the parameter checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use optim::{Adam, AdamConfig, BoundParams, ParamStore};
pub use tape::{gemm_with, Tape, Var};
pub use tensor::{numel, DType, Tensor, TensorData};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} elements, got {len}", numel(.shape))]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("expected a {expected} tensor, found {found}")]
    DType { expected: DType, found: DType },
    #[error("mask has no unmasked position in softmax slice {slice}")]
    MaskAllZero { slice: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("index {index} out of range for size {bound}")]
    IndexOutOfRange { index: i64, bound: usize },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: String, expected: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
