use thiserror::Error;

use crate::ElemType;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("tensor extents must be at least 1, got {0:?}")]
    ZeroExtent([usize; 4]),
    #[error("strides {strides:?} alias distinct coordinates of extents {dims:?}")]
    AliasingStrides { dims: [usize; 4], strides: [isize; 4] },
    #[error("buffer of {len} elements cannot hold a view spanning offsets {min}..={max} from origin {origin}")]
    BufferTooSmall { len: usize, origin: usize, min: isize, max: isize },
    #[error("descriptor element type {desc:?} does not match buffer element type {buffer:?}")]
    ElemTypeMismatch { desc: ElemType, buffer: ElemType },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("source and destination buffers overlap")]
    OverlappingBuffers,
    #[error("bias extents {bias:?} cannot broadcast onto {out:?}")]
    IncompatibleBroadcast { bias: [usize; 4], out: [usize; 4] },
    #[error("divisor must be nonzero")]
    ZeroDivisor,
    #[error("matrix dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("empty output: extent {extent}, window {window}, padding {pad} leaves no valid position")]
    EmptyOutput { extent: usize, window: usize, pad: usize },
    #[error("lowered matrix needs {requested} bytes, limit is {limit}")]
    AllocTooLarge { requested: usize, limit: usize },
    #[error("pooling window ({p}, {q}) lies entirely in padding")]
    EmptyWindow { p: usize, q: usize },
    #[error("max pooling backward requires the argmax buffer recorded by the forward pass")]
    MissingArgmax,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}
