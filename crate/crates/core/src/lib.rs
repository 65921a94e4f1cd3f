//! Deep-learning primitives over strided 4-D tensors.
//!
//! The library follows a descriptor style: [`TensorDesc`], [`FilterDesc`]
//! and [`ConvDesc`] describe geometry, caller-owned buffers are attached per
//! call through views, and a [`Context`] carries threading and tiling
//! choices. Convolution runs on one of three engines (see [`Engine`]); the
//! implicit-GEMM engine feeds a tiled matrix multiply with a virtual lowered
//! data matrix, so the lowered matrix is never stored.

pub mod context;
pub mod conv;
pub mod error;
pub mod gemm;
pub mod intdiv;
pub mod nnops;
pub mod scalar;
pub mod tensor;

pub use context::Context;
pub use conv::{
    access, conv_backward_bias, conv_backward_data, conv_backward_filter, conv_forward, implicit_provider,
    lower_explicit, output_extent, ConvDesc, ConvGeometry, ConvMode, Engine, FilterDesc, FilterView, FilterViewMut,
    ImplicitProvider, Lowered, PadPreset,
};
pub use error::{Error, Result};
pub use gemm::{gemm, Matrix, MatrixSource, StoredMatrix, StoredMatrixMut, TileConfig, VirtualMatrix};
pub use intdiv::MagicDivider;
pub use nnops::{
    activation_backward, activation_forward, pool_backward, pool_forward, softmax_backward, softmax_forward,
    ActivationKind, PoolingDesc, PoolingKind, SoftmaxMode,
};
pub use scalar::{ElemType, Scalar};
pub use tensor::{add_broadcast, transform, Layout, TensorDesc, TensorView, TensorViewMut};
