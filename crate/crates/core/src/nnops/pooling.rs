use super::same_extents;
use crate::conv::output_extent;
use crate::tensor::{TensorDesc, TensorView, TensorViewMut};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolingKind {
    Max,
    /// Mean over the in-image part of each window; padding is not counted.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolingDesc {
    kind: PoolingKind,
    window: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
}

impl PoolingDesc {
    pub fn new(kind: PoolingKind, window: (usize, usize), stride: (usize, usize), pad: (usize, usize)) -> Result<Self> {
        if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidParam(format!(
                "pooling window {window:?} and stride {stride:?} must be positive"
            )));
        }
        Ok(Self { kind, window, stride, pad })
    }

    pub fn kind(&self) -> PoolingKind {
        self.kind
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn stride(&self) -> (usize, usize) {
        self.stride
    }

    pub fn pad(&self) -> (usize, usize) {
        self.pad
    }

    /// `(N, C, P, Q)` for input `x`, using the convolution extent rule.
    pub fn output_dims(&self, x: &TensorDesc) -> Result<[usize; 4]> {
        let [n, c, h, w] = x.dims();
        Ok([
            n,
            c,
            output_extent(h, self.window.0, self.stride.0, self.pad.0)?,
            output_extent(w, self.window.1, self.stride.1, self.pad.1)?,
        ])
    }

    /// In-image rows (or columns) covered by output index `o` along one axis.
    #[inline]
    fn span(o: usize, window: usize, stride: usize, pad: usize, extent: usize) -> (usize, usize) {
        let start = (o * stride) as isize - pad as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + window as isize).max(0) as usize).min(extent);
        (lo.min(hi), hi)
    }

    fn rows(&self, p: usize, h: usize) -> (usize, usize) {
        Self::span(p, self.window.0, self.stride.0, self.pad.0, h)
    }

    fn cols(&self, q: usize, w: usize) -> (usize, usize) {
        Self::span(q, self.window.1, self.stride.1, self.pad.1, w)
    }

    fn check_windows(&self, [_, _, h, w]: [usize; 4], [_, _, p, q]: [usize; 4]) -> Result<()> {
        let dead_p = (0..p).find(|&pi| {
            let (lo, hi) = self.rows(pi, h);
            lo == hi
        });
        let dead_q = (0..q).find(|&qi| {
            let (lo, hi) = self.cols(qi, w);
            lo == hi
        });
        match (dead_p, dead_q) {
            (None, None) => Ok(()),
            (dp, dq) => Err(Error::EmptyWindow { p: dp.unwrap_or(0), q: dq.unwrap_or(0) }),
        }
    }
}

fn argmax_len(dims: [usize; 4]) -> usize {
    dims.iter().product()
}

/// Pools `x` into `y`.
///
/// For max pooling, `argmax`, when given, receives for every output element
/// (in NCHW order of `y`) the NCHW-flat index `((n C + c) H + h) W + w` of the
/// first maximum in row-major window order.
pub fn pool_forward<T: Scalar>(
    pd: &PoolingDesc,
    x: &TensorView<'_, T>,
    y: &mut TensorViewMut<'_, T>,
    mut argmax: Option<&mut [usize]>,
) -> Result<()> {
    let out = pd.output_dims(x.desc())?;
    y.desc().expect_extents(out, "pooling output")?;
    pd.check_windows(x.dims(), out)?;
    if let Some(buf) = argmax.as_deref() {
        if buf.len() < argmax_len(out) {
            return Err(Error::ShapeMismatch(format!(
                "argmax buffer holds {} entries, output has {}",
                buf.len(),
                argmax_len(out)
            )));
        }
    }
    let [n, c, p, q] = out;
    let [_, _, h, w] = x.dims();
    let mut slot = 0;
    for ni in 0..n {
        for ci in 0..c {
            for pi in 0..p {
                let (h0, h1) = pd.rows(pi, h);
                for qi in 0..q {
                    let (w0, w1) = pd.cols(qi, w);
                    let value = match pd.kind {
                        PoolingKind::Max => {
                            let mut best = x.get(ni, ci, h0, w0);
                            let mut at = (h0, w0);
                            for hi in h0..h1 {
                                for wi in w0..w1 {
                                    let v = x.get(ni, ci, hi, wi);
                                    if v > best {
                                        best = v;
                                        at = (hi, wi);
                                    }
                                }
                            }
                            if let Some(buf) = argmax.as_deref_mut() {
                                buf[slot] = ((ni * c + ci) * h + at.0) * w + at.1;
                            }
                            best
                        }
                        PoolingKind::Average => {
                            let mut sum = T::zero();
                            for hi in h0..h1 {
                                for wi in w0..w1 {
                                    sum += x.get(ni, ci, hi, wi);
                                }
                            }
                            sum / T::from_f64(((h1 - h0) * (w1 - w0)) as f64)
                        }
                    };
                    y.set(ni, ci, pi, qi, value);
                    slot += 1;
                }
            }
        }
    }
    Ok(())
}

/// Routes `dy` back onto `dx` (overwritten). Max pooling sends each gradient
/// to the recorded argmax; average pooling spreads it evenly over the
/// window's in-image elements. Overlapping windows accumulate.
pub fn pool_backward<T: Scalar>(
    pd: &PoolingDesc,
    y: &TensorView<'_, T>,
    dy: &TensorView<'_, T>,
    x: &TensorView<'_, T>,
    dx: &mut TensorViewMut<'_, T>,
    argmax: Option<&[usize]>,
) -> Result<()> {
    let out = pd.output_dims(x.desc())?;
    y.desc().expect_extents(out, "pooling output")?;
    dy.desc().expect_extents(out, "pooling output gradient")?;
    same_extents(x.desc(), dx.desc(), "pooling input vs input gradient")?;
    pd.check_windows(x.dims(), out)?;
    let [n, c, p, q] = out;
    let [_, _, h, w] = x.dims();

    match pd.kind {
        PoolingKind::Max => {
            let argmax = argmax.ok_or(Error::MissingArgmax)?;
            if argmax.len() < argmax_len(out) {
                return Err(Error::ShapeMismatch(format!(
                    "argmax buffer holds {} entries, output has {}",
                    argmax.len(),
                    argmax_len(out)
                )));
            }
            let total = n * c * h * w;
            if let Some(&bad) = argmax[..argmax_len(out)].iter().find(|&&i| i >= total) {
                return Err(Error::InvalidParam(format!("argmax index {bad} outside input of {total} elements")));
            }
            dx.fill(T::zero());
            let mut slot = 0;
            for ni in 0..n {
                for ci in 0..c {
                    for pi in 0..p {
                        for qi in 0..q {
                            let flat = argmax[slot];
                            let (hi, wi) = ((flat / w) % h, flat % w);
                            let (nn, cc) = (flat / (c * h * w), (flat / (h * w)) % c);
                            *dx.get_mut(nn, cc, hi, wi) += dy.get(ni, ci, pi, qi);
                            slot += 1;
                        }
                    }
                }
            }
        }
        PoolingKind::Average => {
            dx.fill(T::zero());
            for ni in 0..n {
                for ci in 0..c {
                    for pi in 0..p {
                        let (h0, h1) = pd.rows(pi, h);
                        for qi in 0..q {
                            let (w0, w1) = pd.cols(qi, w);
                            let share = dy.get(ni, ci, pi, qi) / T::from_f64(((h1 - h0) * (w1 - w0)) as f64);
                            for hi in h0..h1 {
                                for wi in w0..w1 {
                                    *dx.get_mut(ni, ci, hi, wi) += share;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ElemType;

    fn desc(dims: [usize; 4]) -> TensorDesc {
        TensorDesc::nchw(dims[0], dims[1], dims[2], dims[3], ElemType::F64).unwrap()
    }

    fn pool(pd: &PoolingDesc, dims: [usize; 4], xs: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let xd = desc(dims);
        let od = pd.output_dims(&xd).unwrap();
        let yd = desc(od);
        let mut y = vec![0.0; yd.len()];
        let mut arg = vec![usize::MAX; yd.len()];
        let argmax = (pd.kind() == PoolingKind::Max).then_some(arg.as_mut_slice());
        pool_forward(pd, &TensorView::new(xd, xs).unwrap(), &mut TensorViewMut::new(yd, &mut y).unwrap(), argmax)
            .unwrap();
        (y, arg)
    }

    #[test]
    fn two_by_two() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let max = PoolingDesc::new(PoolingKind::Max, (2, 2), (2, 2), (0, 0)).unwrap();
        let avg = PoolingDesc::new(PoolingKind::Average, (2, 2), (2, 2), (0, 0)).unwrap();
        let (y, arg) = pool(&max, [1, 1, 2, 2], &xs);
        assert_eq!((y, arg), (vec![4.0], vec![3]));
        assert_eq!(pool(&avg, [1, 1, 2, 2], &xs).0, [2.5]);
    }

    #[test]
    fn constant_input_stays_constant() {
        let xs = [3.5; 25];
        for kind in [PoolingKind::Max, PoolingKind::Average] {
            let pd = PoolingDesc::new(kind, (3, 2), (2, 1), (1, 1)).unwrap();
            let (y, _) = pool(&pd, [1, 1, 5, 5], &xs);
            assert!(y.iter().all(|&v| v == 3.5), "{kind:?}: {y:?}");
        }
    }

    #[test]
    fn padded_corner_counts_in_image_elements_only() {
        let pd = PoolingDesc::new(PoolingKind::Average, (2, 2), (2, 2), (1, 1)).unwrap();
        let xs = [7.0, 1.0, 1.0, 1.0];
        let (y, _) = pool(&pd, [1, 1, 2, 2], &xs);
        // Top-left window covers only x[0, 0].
        assert_eq!(y[0], 7.0);
    }

    #[test]
    fn first_maximum_wins_ties() {
        let pd = PoolingDesc::new(PoolingKind::Max, (2, 2), (1, 1), (0, 0)).unwrap();
        let (_, arg) = pool(&pd, [1, 1, 2, 3], &[5.0, 5.0, 5.0, 5.0, 5.0, 5.0]);
        assert_eq!(arg, [0, 1]);
    }

    #[test]
    fn window_fully_in_padding_is_an_error() {
        let pd = PoolingDesc::new(PoolingKind::Average, (2, 2), (1, 1), (2, 0)).unwrap();
        let xd = desc([1, 1, 2, 2]);
        let od = pd.output_dims(&xd).unwrap();
        let xs = [0.0; 4];
        let mut y = vec![0.0; od.iter().product()];
        let err = pool_forward(
            &pd,
            &TensorView::new(xd, &xs).unwrap(),
            &mut TensorViewMut::new(desc(od), &mut y).unwrap(),
            None,
        );
        assert!(matches!(err, Err(Error::EmptyWindow { .. })));
    }

    #[test]
    fn average_backward_spreads_evenly() {
        let pd = PoolingDesc::new(PoolingKind::Average, (2, 2), (2, 2), (0, 0)).unwrap();
        let xd = desc([1, 1, 2, 2]);
        let yd = desc([1, 1, 1, 1]);
        let xs = [1.0, 2.0, 3.0, 4.0];
        let mut dx = [0.0; 4];
        pool_backward(
            &pd,
            &TensorView::new(yd, &[2.5]).unwrap(),
            &TensorView::new(yd, &[4.0]).unwrap(),
            &TensorView::new(xd, &xs).unwrap(),
            &mut TensorViewMut::new(xd, &mut dx).unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(dx, [1.0; 4]);
    }

    #[test]
    fn max_backward_needs_argmax_and_conserves_mass() {
        let pd = PoolingDesc::new(PoolingKind::Max, (2, 2), (2, 2), (0, 0)).unwrap();
        let xd = desc([1, 2, 4, 4]);
        let xs: Vec<f64> = (0..32).map(|i| ((i * 7) % 32) as f64).collect();
        let (y, arg) = pool(&pd, [1, 2, 4, 4], &xs);
        let yd = desc([1, 2, 2, 2]);
        let dy: Vec<f64> = (0..8).map(|i| i as f64 - 2.5).collect();
        let mut dx = vec![0.0; 32];
        let err = pool_backward(
            &pd,
            &TensorView::new(yd, &y).unwrap(),
            &TensorView::new(yd, &dy).unwrap(),
            &TensorView::new(xd, &xs).unwrap(),
            &mut TensorViewMut::new(xd, &mut dx).unwrap(),
            None,
        );
        assert_eq!(err, Err(Error::MissingArgmax));
        pool_backward(
            &pd,
            &TensorView::new(yd, &y).unwrap(),
            &TensorView::new(yd, &dy).unwrap(),
            &TensorView::new(xd, &xs).unwrap(),
            &mut TensorViewMut::new(xd, &mut dx).unwrap(),
            Some(&arg),
        )
        .unwrap();
        assert_eq!(dx.iter().sum::<f64>(), dy.iter().sum::<f64>());
        for (slot, &flat) in arg.iter().enumerate() {
            assert_eq!(dx[flat], dy[slot]);
        }
    }
}
