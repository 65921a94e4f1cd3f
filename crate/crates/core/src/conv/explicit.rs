//! Explicit lowering: build `D_m` in memory and multiply stored matrices.
//!
//! The full `D_m` is `R S` times larger than the input, so the engine lowers
//! as many images at a time as fit the context's lowering budget.

use rayon::prelude::*;

use super::implicit::{filter_matrix, Dividers, GradMatrix, OutputSink};
use super::{ConvDesc, ConvGeometry, FilterView};
use crate::gemm::{gemm, gemm_into, Matrix, StoredMatrix};
use crate::tensor::{TensorView, TensorViewMut};
use crate::{Context, Error, Result, Scalar};

/// Operands of the lowered product `O_m = F_m * D_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lowered<T> {
    /// Filters reshaped to K x CRS.
    pub f_m: Matrix<T>,
    /// Input gathered to CRS x NPQ.
    pub d_m: Matrix<T>,
}

/// Materializes both lowered operands for the whole batch.
pub fn lower_explicit<T: Scalar>(
    ctx: &Context,
    x: &TensorView<'_, T>,
    f: &FilterView<'_, T>,
    conv: &ConvDesc,
) -> Result<Lowered<T>> {
    let g = ConvGeometry::new(x.desc(), f.desc(), conv)?;
    let bytes = g.crs().saturating_mul(g.npq()).saturating_mul(std::mem::size_of::<T>());
    if bytes > ctx.lowering_limit_bytes() {
        return Err(Error::AllocTooLarge { requested: bytes, limit: ctx.lowering_limit_bytes() });
    }
    let f_m = Matrix::from_vec(g.k, g.crs(), f.data().to_vec())?;
    let mut d = vec![T::zero(); g.crs() * g.npq()];
    ctx.install(|| lower_images(x, &g, 0, g.n, &mut d));
    Ok(Lowered { f_m, d_m: Matrix::from_vec(g.crs(), g.npq(), d)? })
}

/// Fills `out` (CRS x images*PQ, row-major) with the lowered columns of
/// images `first..first + images`.
fn lower_images<T: Scalar>(x: &TensorView<'_, T>, g: &ConvGeometry, first: usize, images: usize, out: &mut [T]) {
    let cols = images * g.pq();
    out.par_chunks_mut(cols).enumerate().for_each(|(i, line)| {
        let c = i / g.rs();
        let (r, s) = ((i % g.rs()) / g.s, i % g.s);
        for n in 0..images {
            for p in 0..g.p {
                let seg = &mut line[(n * g.p + p) * g.q..][..g.q];
                let h = g.in_row(p, r);
                if h < 0 || h >= g.h as isize {
                    seg.fill(T::zero());
                    continue;
                }
                for (q, slot) in seg.iter_mut().enumerate() {
                    let w = g.in_col(q, s);
                    *slot = if w < 0 || w >= g.w as isize {
                        T::zero()
                    } else {
                        x.get(first + n, c, h as usize, w as usize)
                    };
                }
            }
        }
    });
}

/// Images per lowering pass under the context budget.
fn images_per_pass<T>(ctx: &Context, g: &ConvGeometry) -> Result<usize> {
    let per_image = g.crs().saturating_mul(g.pq()).saturating_mul(std::mem::size_of::<T>());
    let limit = ctx.lowering_limit_bytes();
    match limit / per_image.max(1) {
        0 => Err(Error::AllocTooLarge { requested: per_image, limit }),
        fit => Ok(fit.min(g.n)),
    }
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
    let batch = images_per_pass::<T>(ctx, g)?;
    let divs = Dividers::new(g)?;
    let f_m = filter_matrix(f, g)?;
    let mut d = vec![T::zero(); g.crs() * batch * g.pq()];
    for first in (0..g.n).step_by(batch) {
        let images = batch.min(g.n - first);
        let cols = images * g.pq();
        let d = &mut d[..g.crs() * cols];
        lower_images(x, g, first, images, d);
        let d_m = StoredMatrix::new(d, g.crs(), cols)?;
        let sink = OutputSink { y: y.shared(), divs, first, cols, alpha, beta };
        gemm_into(&f_m, &d_m, &sink, ctx.tile(), true)?;
    }
    Ok(())
}

pub(super) fn backward_data<T: Scalar>(
    ctx: &Context,
    g: &ConvGeometry,
    dy: &TensorView<'_, T>,
    f: &FilterView<'_, T>,
    dx: &mut TensorViewMut<'_, T>,
    accumulate: bool,
) -> Result<()> {
    let batch = images_per_pass::<T>(ctx, g)?;
    let divs = Dividers::new(g)?;
    let f_t = filter_matrix(f, g)?.t();
    if !accumulate {
        dx.fill(T::zero());
    }
    for first in (0..g.n).step_by(batch) {
        let images = batch.min(g.n - first);
        let cols = images * g.pq();
        let grad = Matrix::from_source(&GradMatrix::new(dy, divs, g.k, first, cols));
        let mut cols_grad = Matrix::zeros(g.crs(), cols);
        gemm(&f_t, &grad.as_stored(), &mut cols_grad.as_stored_mut(), T::one(), T::zero(), ctx.tile())?;
        for i in 0..g.crs() {
            let (c, r, s) = divs.row(i);
            for j in 0..cols {
                let (n, p, q) = divs.col(j);
                let (h, w) = (g.in_row(p, r), g.in_col(q, s));
                if h >= 0 && w >= 0 && h < g.h as isize && w < g.w as isize {
                    *dx.get_mut(first + n, c, h as usize, w as usize) += cols_grad.get(i, j);
                }
            }
        }
    }
    Ok(())
}

pub(super) fn backward_filter<T: Scalar>(
    ctx: &Context,
    g: &ConvGeometry,
    dy: &TensorView<'_, T>,
    x: &TensorView<'_, T>,
    df: &mut [T],
    accumulate: bool,
) -> Result<()> {
    let batch = images_per_pass::<T>(ctx, g)?;
    let divs = Dividers::new(g)?;
    let mut d = vec![T::zero(); g.crs() * batch * g.pq()];
    for first in (0..g.n).step_by(batch) {
        let images = batch.min(g.n - first);
        let cols = images * g.pq();
        let d = &mut d[..g.crs() * cols];
        lower_images(x, g, first, images, d);
        let grad = Matrix::from_source(&GradMatrix::new(dy, divs, g.k, first, cols));
        let mut out = crate::gemm::StoredMatrixMut::new(&mut *df, g.k, g.crs())?;
        let beta = if accumulate || first > 0 { T::one() } else { T::zero() };
        let d_t = StoredMatrix::new(d, g.crs(), cols)?.t();
        gemm(&grad.as_stored(), &d_t, &mut out, T::one(), beta, ctx.tile())?;
    }
    Ok(())
}
