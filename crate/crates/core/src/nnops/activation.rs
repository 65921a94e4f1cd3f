use super::same_extents;
use crate::tensor::{for_each_coord, TensorView, TensorViewMut};
use crate::{Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Sigmoid,
    Relu,
    Tanh,
}

impl ActivationKind {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            ActivationKind::Sigmoid => T::one() / (T::one() + (-x).exp()),
            ActivationKind::Relu => x.max(T::zero()),
            ActivationKind::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the forward output `y`.
    #[inline]
    fn slope<T: Scalar>(self, y: T) -> T {
        match self {
            ActivationKind::Sigmoid => y * (T::one() - y),
            ActivationKind::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ActivationKind::Tanh => T::one() - y * y,
        }
    }
}

pub fn activation_forward<T: Scalar>(
    kind: ActivationKind,
    x: &TensorView<'_, T>,
    y: &mut TensorViewMut<'_, T>,
) -> Result<()> {
    same_extents(x.desc(), y.desc(), "activation input vs output")?;
    for_each_coord(x.dims(), |n, c, h, w| y.set(n, c, h, w, kind.apply(x.get(n, c, h, w))));
    Ok(())
}

/// `dx = dy * activation'(x)`, with the derivative taken from `y`.
pub fn activation_backward<T: Scalar>(
    kind: ActivationKind,
    y: &TensorView<'_, T>,
    dy: &TensorView<'_, T>,
    dx: &mut TensorViewMut<'_, T>,
) -> Result<()> {
    same_extents(y.desc(), dy.desc(), "activation output vs gradient")?;
    same_extents(y.desc(), dx.desc(), "activation output vs input gradient")?;
    for_each_coord(y.dims(), |n, c, h, w| {
        dx.set(n, c, h, w, dy.get(n, c, h, w) * kind.slope(y.get(n, c, h, w)));
    });
    Ok(())
}
