use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;

/// Element type tag carried by descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElemType {
    F32,
    F64,
}

impl ElemType {
    pub fn size_of(self) -> usize {
        match self {
            ElemType::F32 => 4,
            ElemType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElemType::F32 => "f32",
            ElemType::F64 => "f64",
        }
    }
}

/// Floating-point element types the kernels are instantiated for.
pub trait Scalar: Float + AddAssign + Sum + Default + Debug + Send + Sync + 'static {
    const ELEM_TYPE: ElemType;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const ELEM_TYPE: ElemType = ElemType::F32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const ELEM_TYPE: ElemType = ElemType::F64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// `alpha * value + beta * prior`, without reading `prior` when `beta` is zero
/// so that uninitialized (NaN) destinations are overwritten cleanly.
#[inline(always)]
pub(crate) fn blend<T: Scalar>(alpha: T, value: T, beta: T, prior: T) -> T {
    if beta == T::zero() {
        alpha * value
    } else {
        alpha * value + beta * prior
    }
}
