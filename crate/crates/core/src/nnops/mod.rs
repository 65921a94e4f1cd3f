//! Activation, softmax and pooling primitives, forward and backward.
//!
//! Every op walks tensors by logical coordinate, so results do not depend on
//! the memory layout of any operand, and reductions run in NCHW order.

mod activation;
mod pooling;
mod softmax;

pub use activation::{activation_backward, activation_forward, ActivationKind};
pub use pooling::{pool_backward, pool_forward, PoolingDesc, PoolingKind};
pub use softmax::{softmax_backward, softmax_forward, SoftmaxMode};

use crate::tensor::TensorDesc;
use crate::{Error, Result};

fn same_extents(a: &TensorDesc, b: &TensorDesc, what: &str) -> Result<()> {
    if a.same_extents(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())))
    }
}
