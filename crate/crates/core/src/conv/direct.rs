//! Straight evaluation of the convolution sums. Slow but obviously correct;
//! the other engines are checked against it.

use rayon::prelude::*;

use super::{ConvGeometry, FilterView};
use crate::scalar::blend;
use crate::tensor::{TensorView, TensorViewMut};
use crate::Scalar;

/// Output columns `q` whose input column `q v + offset` lies in `[0, width)`.
#[inline]
fn live_range(count: usize, stride: usize, offset: isize, width: usize) -> (usize, usize) {
    let lo = if offset >= 0 { 0 } else { ((-offset) as usize).div_ceil(stride) };
    let last = width as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last as usize / stride + 1).min(count);
    (lo.min(hi), hi)
}

pub(super) fn forward<T: Scalar>(
    g: &ConvGeometry,
    x: &TensorView<'_, T>,
    f: &FilterView<'_, T>,
    y: &mut TensorViewMut<'_, T>,
    alpha: T,
    beta: T,
) {
    let y = y.shared();
    let sw = x.desc().strides()[3];
    let data = x.data();
    (0..g.n * g.k).into_par_iter().for_each_init(
        || vec![T::zero(); g.q],
        |row, nk| {
            let (n, k) = (nk / g.k, nk % g.k);
            for p in 0..g.p {
                row.fill(T::zero());
                for c in 0..g.c {
                    for r in 0..g.r {
                        let h = g.in_row(p, r);
                        if h < 0 || h >= g.h as isize {
                            continue;
                        }
                        let base = x.index(n, c, h as usize, 0) as isize;
                        for s in 0..g.s {
                            let wv = f.get(k, c, r, s);
                            let off = g.tap_w(s) - g.pad_w as isize;
                            let (lo, hi) = live_range(g.q, g.v, off, g.w);
                            if lo == hi {
                                continue;
                            }
                            if g.v == 1 && sw == 1 {
                                let start = (base + lo as isize + off) as usize;
                                let src = &data[start..start + (hi - lo)];
                                for (o, &xv) in row[lo..hi].iter_mut().zip(src) {
                                    *o += wv * xv;
                                }
                            } else {
                                for (qi, o) in row.iter_mut().enumerate().take(hi).skip(lo) {
                                    let wi = (qi * g.v) as isize + off;
                                    *o += wv * data[(base + wi * sw) as usize];
                                }
                            }
                        }
                    }
                }
                for (qi, &v) in row.iter().enumerate() {
                    // SAFETY: each (n, k) plane is written by exactly one task.
                    unsafe { y.update(n, k, p, qi, |old| blend(alpha, v, beta, old)) };
                }
            }
        },
    );
}

/// Output index reached from input index `i` through tap offset `tap`, if any.
#[inline(always)]
fn source_index(i: usize, pad: usize, tap: isize, stride: usize, count: usize) -> Option<usize> {
    let t = i as isize + pad as isize - tap;
    if t < 0 || !(t as usize).is_multiple_of(stride) {
        return None;
    }
    let o = t as usize / stride;
    (o < count).then_some(o)
}

/// Gathers `dx[n, c, h, w] = sum over (k, r, s) of f[k, c, r, s] * dy[n, k, p, q]`
/// for the `(p, q)` whose tap `(r, s)` reads `(h, w)`.
pub(super) fn backward_data<T: Scalar>(
    g: &ConvGeometry,
    dy: &TensorView<'_, T>,
    f: &FilterView<'_, T>,
    dx: &mut TensorViewMut<'_, T>,
    accumulate: bool,
) {
    let dx = dx.shared();
    (0..g.n * g.c).into_par_iter().for_each(|nc| {
        let (n, c) = (nc / g.c, nc % g.c);
        for h in 0..g.h {
            for w in 0..g.w {
                let mut sum = T::zero();
                for k in 0..g.k {
                    for r in 0..g.r {
                        let Some(p) = source_index(h, g.pad_h, g.tap_h(r), g.u, g.p) else { continue };
                        for s in 0..g.s {
                            let Some(q) = source_index(w, g.pad_w, g.tap_w(s), g.v, g.q) else { continue };
                            sum += f.get(k, c, r, s) * dy.get(n, k, p, q);
                        }
                    }
                }
                // SAFETY: each (n, c) plane is written by exactly one task.
                unsafe { dx.update(n, c, h, w, |old| if accumulate { old + sum } else { sum }) };
            }
        }
    });
}

pub(super) fn backward_filter<T: Scalar>(
    g: &ConvGeometry,
    dy: &TensorView<'_, T>,
    x: &TensorView<'_, T>,
    df: &mut [T],
    accumulate: bool,
) {
    let crs = g.crs();
    df.par_chunks_mut(crs).enumerate().for_each(|(k, out)| {
        for c in 0..g.c {
            for r in 0..g.r {
                for s in 0..g.s {
                    let mut sum = T::zero();
                    for n in 0..g.n {
                        for p in 0..g.p {
                            let h = g.in_row(p, r);
                            if h < 0 || h >= g.h as isize {
                                continue;
                            }
                            for q in 0..g.q {
                                let w = g.in_col(q, s);
                                if w < 0 || w >= g.w as isize {
                                    continue;
                                }
                                sum += dy.get(n, k, p, q) * x.get(n, c, h as usize, w as usize);
                            }
                        }
                    }
                    let slot = &mut out[(c * g.r + r) * g.s + s];
                    *slot = if accumulate { *slot + sum } else { sum };
                }
            }
        }
    });
}
