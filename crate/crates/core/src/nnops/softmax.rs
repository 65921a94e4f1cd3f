use super::same_extents;
use crate::tensor::{TensorView, TensorViewMut};
use crate::{Result, Scalar};

/// Normalization groups for softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SoftmaxMode {
    /// One group per image, spanning C x H x W.
    PerImage,
    /// One group per `(n, h, w)`, spanning the C feature maps.
    PerSpatial,
}

/// Calls `f` with the coordinates of each normalization group, in NCHW order.
fn for_each_group(dims: [usize; 4], mode: SoftmaxMode, mut f: impl FnMut(&[[usize; 4]])) {
    let [n, c, h, w] = dims;
    let mut group = Vec::new();
    match mode {
        SoftmaxMode::PerImage => {
            for ni in 0..n {
                group.clear();
                for ci in 0..c {
                    for hi in 0..h {
                        for wi in 0..w {
                            group.push([ni, ci, hi, wi]);
                        }
                    }
                }
                f(&group);
            }
        }
        SoftmaxMode::PerSpatial => {
            for ni in 0..n {
                for hi in 0..h {
                    for wi in 0..w {
                        group.clear();
                        group.extend((0..c).map(|ci| [ni, ci, hi, wi]));
                        f(&group);
                    }
                }
            }
        }
    }
}

/// Softmax with the group maximum subtracted before exponentiating.
pub fn softmax_forward<T: Scalar>(
    mode: SoftmaxMode,
    x: &TensorView<'_, T>,
    y: &mut TensorViewMut<'_, T>,
) -> Result<()> {
    same_extents(x.desc(), y.desc(), "softmax input vs output")?;
    for_each_group(x.dims(), mode, |group| {
        let max = group.iter().map(|&[n, c, h, w]| x.get(n, c, h, w)).fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for &[n, c, h, w] in group {
            let e = (x.get(n, c, h, w) - max).exp();
            sum += e;
            y.set(n, c, h, w, e);
        }
        for &[n, c, h, w] in group {
            let v = y.get(n, c, h, w) / sum;
            y.set(n, c, h, w, v);
        }
    });
    Ok(())
}

/// `dx_i = y_i (dy_i - sum_j dy_j y_j)` within each group.
pub fn softmax_backward<T: Scalar>(
    mode: SoftmaxMode,
    y: &TensorView<'_, T>,
    dy: &TensorView<'_, T>,
    dx: &mut TensorViewMut<'_, T>,
) -> Result<()> {
    same_extents(y.desc(), dy.desc(), "softmax output vs gradient")?;
    same_extents(y.desc(), dx.desc(), "softmax output vs input gradient")?;
    for_each_group(y.dims(), mode, |group| {
        let dot: T = group.iter().map(|&[n, c, h, w]| dy.get(n, c, h, w) * y.get(n, c, h, w)).sum();
        for &[n, c, h, w] in group {
            dx.set(n, c, h, w, y.get(n, c, h, w) * (dy.get(n, c, h, w) - dot));
        }
    });
    Ok(())
}
