//! Implicit-GEMM convolution.
//!
//! Forward convolution is the product `O_m = F_m * D_m`, where
//! `F_m` (K x CRS) is the filter bank read in place and `D_m` (CRS x NPQ)
//! is the lowered data matrix
//!
//! ```text
//! D_m[c RS + r S + s, n PQ + p Q + q] = x[n, c, in_row(p, r), in_col(q, s)]   (0 outside the image)
//! ```
//!
//! `D_m` duplicates each input element up to `R S` times, so it is never
//! stored. [`ImplicitProvider`] presents it as a virtual matrix: when the
//! matmul engine asks for a tile, the provider decodes the tile's row and
//! column indices back to `(c, r, s)` and `(n, p, q)` with precomputed
//! magic-number dividers and gathers the input pixels directly. Finished
//! output tiles are written straight into the caller's layout.
//!
//! Both backward passes reuse the engine with the operand roles swapped:
//! `dD_m = F_m^T dO_m` is scattered back onto `dx` tile by tile, and
//! `dF_m = dO_m D_m^T` reads `D_m` through the same provider.

use rayon::prelude::*;

use super::{ConvDesc, ConvGeometry, FilterDesc, FilterView};
use crate::gemm::{gemm, gemm_into, Block, MatrixSource, StoredMatrix, StoredMatrixMut, TileSink, Transposed};
use crate::intdiv::{split, MagicDivider};
use crate::scalar::blend;
use crate::tensor::{SharedTensor, TensorView, TensorViewMut};
use crate::{Context, Error, Result, Scalar};

/// Rows or columns decoded per stack-resident batch in `fill_block`.
const DECODE_BATCH: usize = 64;

/// Launch-time dividers for the lowered-matrix index decode.
#[derive(Debug, Clone, Copy)]
pub(super) struct Dividers {
    pub rs: MagicDivider,
    pub s: MagicDivider,
    pub pq: MagicDivider,
    pub q: MagicDivider,
}

impl Dividers {
    pub(super) fn new(g: &ConvGeometry) -> Result<Self> {
        let fits = |v: usize| {
            u32::try_from(v)
                .map_err(|_| Error::InvalidParam(format!("lowered index space {v} exceeds 32-bit index arithmetic")))
        };
        fits(g.crs())?;
        fits(g.npq())?;
        Ok(Self {
            rs: MagicDivider::new(fits(g.rs())?)?,
            s: MagicDivider::new(fits(g.s)?)?,
            pq: MagicDivider::new(fits(g.pq())?)?,
            q: MagicDivider::new(fits(g.q)?)?,
        })
    }

    /// Lowered row -> `(c, r, s)`.
    #[inline(always)]
    pub(super) fn row(&self, i: usize) -> (usize, usize, usize) {
        let (c, rs) = split(&self.rs, i);
        let (r, s) = split(&self.s, rs);
        (c, r, s)
    }

    /// Lowered column -> `(n, p, q)`.
    #[inline(always)]
    pub(super) fn col(&self, j: usize) -> (usize, usize, usize) {
        let (n, pq) = split(&self.pq, j);
        let (p, q) = split(&self.q, pq);
        (n, p, q)
    }
}

#[derive(Clone, Copy, Default)]
struct RowTap {
    channel: isize,
    dh: isize,
    dw: isize,
    live: bool,
}

#[derive(Clone, Copy, Default)]
struct ColBase {
    image: isize,
    h0: isize,
    w0: isize,
    live: bool,
}

/// The lowered data matrix `D_m` (CRS x NPQ) as a virtual matrix over `x`.
pub struct ImplicitProvider<'a, T> {
    x: TensorView<'a, T>,
    g: ConvGeometry,
    divs: Dividers,
}

impl<'a, T: Scalar> ImplicitProvider<'a, T> {
    pub(super) fn new(x: TensorView<'a, T>, g: ConvGeometry) -> Result<Self> {
        Ok(Self { divs: Dividers::new(&g)?, x, g })
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.g
    }

    #[inline(always)]
    fn row_tap(&self, i: usize) -> RowTap {
        if i >= self.g.crs() {
            return RowTap::default();
        }
        let (c, r, s) = self.divs.row(i);
        RowTap {
            channel: c as isize * self.x.desc().strides()[1],
            dh: self.g.tap_h(r),
            dw: self.g.tap_w(s),
            live: true,
        }
    }

    #[inline(always)]
    fn col_base(&self, j: usize) -> ColBase {
        if j >= self.g.npq() {
            return ColBase::default();
        }
        let (n, p, q) = self.divs.col(j);
        ColBase {
            image: self.x.origin() as isize + n as isize * self.x.desc().strides()[0],
            h0: (p * self.g.u) as isize - self.g.pad_h as isize,
            w0: (q * self.g.v) as isize - self.g.pad_w as isize,
            live: true,
        }
    }

    #[inline(always)]
    fn gather(&self, row: &RowTap, col: &ColBase) -> T {
        if !(row.live && col.live) {
            return T::zero();
        }
        let h = col.h0 + row.dh;
        let w = col.w0 + row.dw;
        if h < 0 || w < 0 || h >= self.g.h as isize || w >= self.g.w as isize {
            return T::zero();
        }
        let [_, _, sh, sw] = self.x.desc().strides();
        self.x.data()[(col.image + row.channel + h * sh + w * sw) as usize]
    }
}

impl<T: Scalar> MatrixSource<T> for ImplicitProvider<'_, T> {
    fn rows(&self) -> usize {
        self.g.crs()
    }

    fn cols(&self) -> usize {
        self.g.npq()
    }

    fn at(&self, i: usize, j: usize) -> T {
        self.gather(&self.row_tap(i), &self.col_base(j))
    }

    /// Decodes each row and column of the block once, then gathers.
    fn fill_block(&self, block: Block, dst: &mut [T], row_step: usize, col_step: usize) {
        let mut rows = [RowTap::default(); DECODE_BATCH];
        let mut cols = [ColBase::default(); DECODE_BATCH];
        for r0 in (0..block.rows).step_by(DECODE_BATCH) {
            let nr = DECODE_BATCH.min(block.rows - r0);
            for (rr, tap) in rows.iter_mut().enumerate().take(nr) {
                *tap = self.row_tap(block.row + r0 + rr);
            }
            for c0 in (0..block.cols).step_by(DECODE_BATCH) {
                let nc = DECODE_BATCH.min(block.cols - c0);
                for (cc, base) in cols.iter_mut().enumerate().take(nc) {
                    *base = self.col_base(block.col + c0 + cc);
                }
                for (rr, tap) in rows.iter().enumerate().take(nr) {
                    let line = (r0 + rr) * row_step + c0 * col_step;
                    for (cc, base) in cols.iter().enumerate().take(nc) {
                        dst[line + cc * col_step] = self.gather(tap, base);
                    }
                }
            }
        }
    }
}

/// Builds the virtual `D_m` for `x` under the given filter geometry.
pub fn implicit_provider<'a, T: Scalar>(
    x: TensorView<'a, T>,
    f: &FilterDesc,
    conv: &ConvDesc,
) -> Result<ImplicitProvider<'a, T>> {
    let g = ConvGeometry::new(x.desc(), f, conv)?;
    ImplicitProvider::new(x, g)
}

/// `dO_m` (K x images*PQ) read in place from `dy`, starting at image `first`.
pub(super) struct GradMatrix<'a, 'b, T> {
    dy: &'b TensorView<'a, T>,
    divs: Dividers,
    k: usize,
    first: usize,
    cols: usize,
}

impl<'a, 'b, T: Scalar> GradMatrix<'a, 'b, T> {
    pub(super) fn new(dy: &'b TensorView<'a, T>, divs: Dividers, k: usize, first: usize, cols: usize) -> Self {
        Self { dy, divs, k, first, cols }
    }
}

impl<T: Scalar> MatrixSource<T> for GradMatrix<'_, '_, T> {
    fn rows(&self) -> usize {
        self.k
    }

    fn cols(&self) -> usize {
        self.cols
    }

    #[inline(always)]
    fn at(&self, k: usize, j: usize) -> T {
        let (n, p, q) = self.divs.col(j);
        self.dy.get(self.first + n, k, p, q)
    }
}

/// Writes `O_m` tiles into `y[first + n, k, p, q]`, i.e. transposes the
/// matmul output into the caller's layout.
pub(super) struct OutputSink<'a, T> {
    pub y: SharedTensor<'a, T>,
    pub divs: Dividers,
    pub first: usize,
    pub cols: usize,
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> TileSink<T> for OutputSink<'_, T> {
    fn rows(&self) -> usize {
        self.y.dims()[1]
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn store(&self, block: Block, acc: &[T], ld: usize) {
        for c in 0..block.cols {
            let (n, p, q) = self.divs.col(block.col + c);
            for r in 0..block.rows {
                let v = acc[r * ld + c];
                // SAFETY: distinct (k, j) cells map to distinct output
                // coordinates and the engine stores each cell once.
                unsafe {
                    self.y.update(self.first + n, block.row + r, p, q, |old| blend(self.alpha, v, self.beta, old))
                };
            }
        }
    }
}

/// Scatter-adds `dD_m` tiles for one image back onto `dx`.
struct ScatterSink<'a, 'b, T> {
    dx: &'b SharedTensor<'a, T>,
    g: ConvGeometry,
    divs: Dividers,
    image: usize,
}

impl<T: Scalar> TileSink<T> for ScatterSink<'_, '_, T> {
    fn rows(&self) -> usize {
        self.g.crs()
    }

    fn cols(&self) -> usize {
        self.g.pq()
    }

    fn store(&self, block: Block, acc: &[T], ld: usize) {
        for r in 0..block.rows {
            let (c, fr, fs) = self.divs.row(block.row + r);
            for col in 0..block.cols {
                let (_, p, q) = self.divs.col(block.col + col);
                let h = self.g.in_row(p, fr);
                let w = self.g.in_col(q, fs);
                if h < 0 || w < 0 || h >= self.g.h as isize || w >= self.g.w as isize {
                    continue;
                }
                let v = acc[r * ld + col];
                // SAFETY: the sink only touches image `self.image`, and the
                // engine runs it serially for that image.
                unsafe { self.dx.update(self.image, c, h as usize, w as usize, |old| old + v) };
            }
        }
    }
}

pub(super) fn filter_matrix<'a, T: Scalar>(f: &FilterView<'a, T>, g: &ConvGeometry) -> Result<StoredMatrix<'a, T>> {
    StoredMatrix::new(f.data(), g.k, g.crs())
}

pub(super) fn forward<T: Scalar>(
    ctx: &Context,
    g: &ConvGeometry,
    x: &TensorView<'_, T>,
    f: &FilterView<'_, T>,
    y: &mut TensorViewMut<'_, T>,
    alpha: T,
    beta: T,
) -> Result<()> {
    let d_m = ImplicitProvider::new(*x, *g)?;
    let f_m = filter_matrix(f, g)?;
    let sink = OutputSink { y: y.shared(), divs: d_m.divs, first: 0, cols: g.npq(), alpha, beta };
    gemm_into(&f_m, &d_m, &sink, ctx.tile(), true)
}

pub(super) fn backward_data<T: Scalar>(
    ctx: &Context,
    g: &ConvGeometry,
    dy: &TensorView<'_, T>,
    f: &FilterView<'_, T>,
    dx: &mut TensorViewMut<'_, T>,
    accumulate: bool,
) -> Result<()> {
    let divs = Dividers::new(g)?;
    let f_t = filter_matrix(f, g)?.t();
    if !accumulate {
        dx.fill(T::zero());
    }
    let shared = dx.shared();
    (0..g.n).into_par_iter().try_for_each(|image| {
        let grad = GradMatrix::new(dy, divs, g.k, image, g.pq());
        let sink = ScatterSink { dx: &shared, g: *g, divs, image };
        gemm_into(&f_t, &grad, &sink, ctx.tile(), false)
    })
}

pub(super) fn backward_filter<T: Scalar>(
    ctx: &Context,
    g: &ConvGeometry,
    dy: &TensorView<'_, T>,
    x: &TensorView<'_, T>,
    df: &mut [T],
    accumulate: bool,
) -> Result<()> {
    let d_m = ImplicitProvider::new(*x, *g)?;
    let grad = GradMatrix::new(dy, d_m.divs, g.k, 0, g.npq());
    let mut out = StoredMatrixMut::new(df, g.k, g.crs())?;
    let beta = if accumulate { T::one() } else { T::zero() };
    gemm(&grad, &Transposed(d_m), &mut out, T::one(), beta, ctx.tile())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{ElemType, TensorDesc};

    #[test]
    fn decodes_lowered_row_eleven() {
        let x = TensorDesc::nchw(1, 3, 3, 3, ElemType::F64).unwrap();
        let f = FilterDesc::new(2, 3, 2, 2, ElemType::F64).unwrap();
        let g = ConvGeometry::new(&x, &f, &ConvDesc::new(1, 1, 0, 0).unwrap()).unwrap();
        let divs = Dividers::new(&g).unwrap();
        assert_eq!(divs.row(11), (2, 1, 1));
        assert_eq!(divs.col(0), (0, 0, 0));
        assert_eq!(divs.col(3), (0, 1, 1));
    }

    #[test]
    fn one_by_one_filter_reads_pixels_in_place() {
        let desc = TensorDesc::nhwc(2, 2, 2, 3, ElemType::F64).unwrap();
        let data: Vec<f64> = (0..desc.len()).map(|i| i as f64).collect();
        let x = TensorView::new(desc, &data).unwrap();
        let f = FilterDesc::new(1, 2, 1, 1, ElemType::F64).unwrap();
        let prov = implicit_provider(x, &f, &ConvDesc::new(1, 1, 0, 0).unwrap()).unwrap();
        for c in 0..2 {
            for n in 0..2 {
                for h in 0..2 {
                    for w in 0..3 {
                        assert_eq!(prov.at(c, (n * 2 + h) * 3 + w), x.get(n, c, h, w));
                    }
                }
            }
        }
    }
}
