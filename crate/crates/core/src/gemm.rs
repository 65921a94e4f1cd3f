//! Tiled matrix multiplication over abstract operands.
//!
//! Operands are anything implementing [`MatrixSource`]: stored matrices with
//! arbitrary strides, or virtual matrices whose elements are computed on
//! demand. The engine never asks an operand for more than one tile at a time,
//! so a virtual operand is only ever materialized tile by tile in a small
//! per-worker buffer. Results leave through a [`TileSink`], which lets callers
//! scatter finished tiles into whatever layout they need.

use std::marker::PhantomData;

use rayon::prelude::*;

use crate::scalar::blend;
use crate::tensor::strides_injective;
use crate::{Error, Result, Scalar};

const MR: usize = 4;
const NR: usize = 8;

/// Output tile rows, output tile columns, and accumulation depth per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    tile_m: usize,
    tile_n: usize,
    tile_k: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self { tile_m: 64, tile_n: 64, tile_k: 8 }
    }
}

impl TileConfig {
    pub fn new(tile_m: usize, tile_n: usize, tile_k: usize) -> Result<Self> {
        if tile_m == 0 || tile_n == 0 || tile_k == 0 {
            return Err(Error::InvalidParam(format!(
                "tile sizes must be positive, got ({tile_m}, {tile_n}, {tile_k})"
            )));
        }
        Ok(Self { tile_m, tile_n, tile_k })
    }

    pub fn tile_m(&self) -> usize {
        self.tile_m
    }

    pub fn tile_n(&self) -> usize {
        self.tile_n
    }

    pub fn tile_k(&self) -> usize {
        self.tile_k
    }

    /// Elements held by one worker's A, B and accumulator tiles.
    pub fn working_set(&self) -> usize {
        self.tile_m * self.tile_k + self.tile_k * self.tile_n + self.tile_m * self.tile_n
    }
}

/// A rectangular region of a matrix. May extend past the matrix edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Read-only matrix operand.
pub trait MatrixSource<T: Scalar>: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// Element `(i, j)`; only called inside the matrix.
    fn at(&self, i: usize, j: usize) -> T;

    /// Copies `block` into `dst`, placing block cell `(r, c)` at
    /// `dst[r * row_step + c * col_step]`. Cells outside the matrix are
    /// written as zero.
    fn fill_block(&self, block: Block, dst: &mut [T], row_step: usize, col_step: usize) {
        let (rows, cols) = (self.rows(), self.cols());
        for r in 0..block.rows {
            let i = block.row + r;
            for c in 0..block.cols {
                let j = block.col + c;
                dst[r * row_step + c * col_step] = if i < rows && j < cols { self.at(i, j) } else { T::zero() };
            }
        }
    }
}

/// Receives finished output tiles.
///
/// The engine hands each output cell to the sink exactly once. In parallel
/// runs, `store` is called concurrently for disjoint blocks.
pub trait TileSink<T: Scalar>: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// `acc` holds the block row-major with leading dimension `ld`.
    fn store(&self, block: Block, acc: &[T], ld: usize);
}

/// Dense row-major matrix owning its storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!("{} elements for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    /// Evaluates every element of `src`.
    pub fn from_source(src: &impl MatrixSource<T>) -> Self {
        let mut m = Self::zeros(src.rows(), src.cols());
        let block = Block { row: 0, col: 0, rows: m.rows, cols: m.cols };
        src.fill_block(block, &mut m.data, m.cols, 1);
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn as_stored(&self) -> StoredMatrix<'_, T> {
        StoredMatrix {
            data: &self.data,
            rows: self.rows,
            cols: self.cols,
            row_stride: self.cols as isize,
            col_stride: 1,
            origin: 0,
        }
    }

    pub fn as_stored_mut(&mut self) -> StoredMatrixMut<'_, T> {
        StoredMatrixMut {
            rows: self.rows,
            cols: self.cols,
            row_stride: self.cols as isize,
            col_stride: 1,
            origin: 0,
            data: &mut self.data,
        }
    }
}

fn check_bounds(len: usize, rows: usize, cols: usize, rs: isize, cs: isize, origin: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Ok(());
    }
    let reach = |d: usize, s: isize| (d as isize - 1) * s;
    let (r, c) = (reach(rows, rs), reach(cols, cs));
    let lo = origin as isize + r.min(0) + c.min(0);
    let hi = origin as isize + r.max(0) + c.max(0);
    if lo < 0 || hi >= len as isize {
        return Err(Error::DimMismatch(format!(
            "{rows}x{cols} matrix with strides ({rs}, {cs}) does not fit a buffer of {len}"
        )));
    }
    Ok(())
}

fn auto_origin(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    let neg = |d: usize, s: isize| if s < 0 { (d.max(1) as isize - 1) * -s } else { 0 };
    (neg(rows, rs) + neg(cols, cs)) as usize
}

/// Matrix backed by a strided buffer.
#[derive(Debug, Clone, Copy)]
pub struct StoredMatrix<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
    origin: usize,
}

impl<'a, T: Scalar> StoredMatrix<'a, T> {
    /// Dense row-major matrix.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Result<Self> {
        Self::with_strides(data, rows, cols, cols as isize, 1)
    }

    /// Strided matrix. Aliasing strides are allowed for inputs.
    pub fn with_strides(data: &'a [T], rows: usize, cols: usize, row_stride: isize, col_stride: isize) -> Result<Self> {
        let origin = auto_origin(rows, cols, row_stride, col_stride);
        check_bounds(data.len(), rows, cols, row_stride, col_stride, origin)?;
        Ok(Self { data, rows, cols, row_stride, col_stride, origin })
    }

    /// The same storage read as the transpose.
    pub fn t(&self) -> Self {
        Self { rows: self.cols, cols: self.rows, row_stride: self.col_stride, col_stride: self.row_stride, ..*self }
    }

    #[inline(always)]
    fn index(&self, i: usize, j: usize) -> usize {
        (self.origin as isize + i as isize * self.row_stride + j as isize * self.col_stride) as usize
    }
}

impl<T: Scalar> MatrixSource<T> for StoredMatrix<'_, T> {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    #[inline(always)]
    fn at(&self, i: usize, j: usize) -> T {
        self.data[self.index(i, j)]
    }

    fn fill_block(&self, block: Block, dst: &mut [T], row_step: usize, col_step: usize) {
        let live_rows = self.rows.saturating_sub(block.row).min(block.rows);
        let live_cols = self.cols.saturating_sub(block.col).min(block.cols);
        for r in 0..block.rows {
            if r < live_rows {
                let base = self.index(block.row + r, block.col) as isize;
                for c in 0..live_cols {
                    dst[r * row_step + c * col_step] = self.data[(base + c as isize * self.col_stride) as usize];
                }
                for c in live_cols..block.cols {
                    dst[r * row_step + c * col_step] = T::zero();
                }
            } else {
                for c in 0..block.cols {
                    dst[r * row_step + c * col_step] = T::zero();
                }
            }
        }
    }
}

/// Matrix defined by an index rule instead of storage.
pub struct VirtualMatrix<T, F> {
    rows: usize,
    cols: usize,
    rule: F,
    _marker: PhantomData<fn() -> T>,
}

impl<T: Scalar, F: Fn(usize, usize) -> T + Sync> VirtualMatrix<T, F> {
    pub fn new(rows: usize, cols: usize, rule: F) -> Self {
        Self { rows, cols, rule, _marker: PhantomData }
    }
}

impl<T: Scalar, F: Fn(usize, usize) -> T + Sync> MatrixSource<T> for VirtualMatrix<T, F> {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn at(&self, i: usize, j: usize) -> T {
        (self.rule)(i, j)
    }
}

/// Reads another source as its transpose.
pub struct Transposed<S>(pub S);

impl<T: Scalar, S: MatrixSource<T>> MatrixSource<T> for Transposed<S> {
    fn rows(&self) -> usize {
        self.0.cols()
    }

    fn cols(&self) -> usize {
        self.0.rows()
    }

    fn at(&self, i: usize, j: usize) -> T {
        self.0.at(j, i)
    }

    fn fill_block(&self, block: Block, dst: &mut [T], row_step: usize, col_step: usize) {
        let flipped = Block { row: block.col, col: block.row, rows: block.cols, cols: block.rows };
        self.0.fill_block(flipped, dst, col_step, row_step);
    }
}

/// Strided, injective output matrix.
#[derive(Debug)]
pub struct StoredMatrixMut<'a, T> {
    data: &'a mut [T],
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
    origin: usize,
}

impl<'a, T: Scalar> StoredMatrixMut<'a, T> {
    pub fn new(data: &'a mut [T], rows: usize, cols: usize) -> Result<Self> {
        Self::with_strides(data, rows, cols, cols as isize, 1)
    }

    pub fn with_strides(
        data: &'a mut [T],
        rows: usize,
        cols: usize,
        row_stride: isize,
        col_stride: isize,
    ) -> Result<Self> {
        if !strides_injective(&[rows, cols], &[row_stride, col_stride])? {
            return Err(Error::DimMismatch(format!("output strides ({row_stride}, {col_stride}) alias")));
        }
        let origin = auto_origin(rows, cols, row_stride, col_stride);
        check_bounds(data.len(), rows, cols, row_stride, col_stride, origin)?;
        Ok(Self { data, rows, cols, row_stride, col_stride, origin })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[(self.origin as isize + i as isize * self.row_stride + j as isize * self.col_stride) as usize]
    }

    fn sink(&mut self, alpha: T, beta: T) -> MatrixSink<'_, T> {
        MatrixSink {
            ptr: self.data.as_mut_ptr(),
            rows: self.rows,
            cols: self.cols,
            row_stride: self.row_stride,
            col_stride: self.col_stride,
            origin: self.origin,
            alpha,
            beta,
            _marker: PhantomData,
        }
    }
}

/// `C := alpha * acc + beta * C` through a raw pointer so that workers can
/// store disjoint tiles concurrently.
struct MatrixSink<'a, T> {
    ptr: *mut T,
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
    origin: usize,
    alpha: T,
    beta: T,
    _marker: PhantomData<&'a mut [T]>,
}

// SAFETY: only built by `gemm` from an exclusive borrow with injective,
// bounds-checked strides; the driver stores each cell exactly once.
unsafe impl<T: Send> Send for MatrixSink<'_, T> {}
unsafe impl<T: Sync> Sync for MatrixSink<'_, T> {}

impl<T: Scalar> TileSink<T> for MatrixSink<'_, T> {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn store(&self, block: Block, acc: &[T], ld: usize) {
        for r in 0..block.rows {
            let i = (block.row + r) as isize;
            for c in 0..block.cols {
                let j = (block.col + c) as isize;
                let idx = self.origin as isize + i * self.row_stride + j * self.col_stride;
                // SAFETY: (i, j) is inside the checked box and owned by this tile.
                unsafe {
                    let p = self.ptr.offset(idx);
                    *p = blend(self.alpha, acc[r * ld + c], self.beta, *p);
                }
            }
        }
    }
}

/// `c := alpha * a * b + beta * c`, parallel over output tiles.
pub fn gemm<T, A, B>(a: &A, b: &B, c: &mut StoredMatrixMut<'_, T>, alpha: T, beta: T, cfg: &TileConfig) -> Result<()>
where
    T: Scalar,
    A: MatrixSource<T>,
    B: MatrixSource<T>,
{
    let sink = c.sink(alpha, beta);
    gemm_into(a, b, &sink, cfg, true)
}

struct TileBuffers<T> {
    a: Vec<T>,
    b: Vec<T>,
    acc: Vec<T>,
}

impl<T: Scalar> TileBuffers<T> {
    fn new(cfg: &TileConfig) -> Self {
        Self {
            a: vec![T::zero(); cfg.tile_m * cfg.tile_k],
            b: vec![T::zero(); cfg.tile_k * cfg.tile_n],
            acc: vec![T::zero(); cfg.tile_m * cfg.tile_n],
        }
    }
}

/// Multiplies `a * b` and hands every output tile to `sink`.
///
/// For each `tile_m x tile_n` output tile the engine walks the inner
/// dimension in `tile_k` steps: it fills an A tile (stored k-major) and a B
/// tile from the sources, then accumulates. Every output element sums its
/// products in increasing inner index, so the result does not depend on the
/// tile configuration or thread count.
pub fn gemm_into<T, A, B, S>(a: &A, b: &B, sink: &S, cfg: &TileConfig, parallel: bool) -> Result<()>
where
    T: Scalar,
    A: MatrixSource<T>,
    B: MatrixSource<T>,
    S: TileSink<T>,
{
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    if b.rows() != k {
        return Err(Error::DimMismatch(format!("inner dimensions {k} and {} differ", b.rows())));
    }
    if sink.rows() != m || sink.cols() != n {
        return Err(Error::DimMismatch(format!("output is {}x{}, product is {m}x{n}", sink.rows(), sink.cols())));
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    let tiles_n = n.div_ceil(cfg.tile_n);
    let tiles = m.div_ceil(cfg.tile_m) * tiles_n;
    let run = |buf: &mut TileBuffers<T>, t: usize| {
        let block = Block {
            row: (t / tiles_n) * cfg.tile_m,
            col: (t % tiles_n) * cfg.tile_n,
            rows: cfg.tile_m.min(m - (t / tiles_n) * cfg.tile_m),
            cols: cfg.tile_n.min(n - (t % tiles_n) * cfg.tile_n),
        };
        compute_tile(a, b, k, block, cfg, buf);
        sink.store(block, &buf.acc, cfg.tile_n);
    };
    if parallel && tiles > 1 {
        (0..tiles).into_par_iter().for_each_init(|| TileBuffers::new(cfg), run);
    } else {
        let mut buf = TileBuffers::new(cfg);
        for t in 0..tiles {
            run(&mut buf, t);
        }
    }
    Ok(())
}

fn compute_tile<T, A, B>(a: &A, b: &B, k: usize, out: Block, cfg: &TileConfig, buf: &mut TileBuffers<T>)
where
    T: Scalar,
    A: MatrixSource<T>,
    B: MatrixSource<T>,
{
    let TileConfig { tile_m: tm, tile_n: tn, tile_k: tk } = *cfg;
    buf.acc.fill(T::zero());
    let mut k0 = 0;
    while k0 < k {
        let kc = tk.min(k - k0);
        a.fill_block(Block { row: out.row, col: k0, rows: tm, cols: tk }, &mut buf.a, 1, tm);
        b.fill_block(Block { row: k0, col: out.col, rows: tk, cols: tn }, &mut buf.b, tn, 1);
        accumulate(kc, tm, tn, &buf.a, &buf.b, &mut buf.acc, out.rows, out.cols);
        k0 += tk;
    }
}

/// `acc[i][j] += sum_kk a[kk][i] * b[kk][j]` over the live `rows x cols`
/// region, in increasing `kk`.
#[allow(clippy::too_many_arguments)]
fn accumulate<T: Scalar>(kc: usize, tm: usize, tn: usize, a: &[T], b: &[T], acc: &mut [T], rows: usize, cols: usize) {
    let mut i = 0;
    while i < rows {
        let mut j = 0;
        while j < cols {
            if i + MR <= tm && j + NR <= tn {
                micro_kernel(kc, tm, tn, &a[i..], &b[j..], &mut acc[i * tn + j..]);
            } else {
                for ii in i..(i + MR).min(rows) {
                    for jj in j..(j + NR).min(cols) {
                        let mut s = acc[ii * tn + jj];
                        for kk in 0..kc {
                            s += a[kk * tm + ii] * b[kk * tn + jj];
                        }
                        acc[ii * tn + jj] = s;
                    }
                }
            }
            j += NR;
        }
        i += MR;
    }
}

#[inline(always)]
fn micro_kernel<T: Scalar>(kc: usize, tm: usize, tn: usize, a: &[T], b: &[T], acc: &mut [T]) {
    let mut c = [[T::zero(); NR]; MR];
    for (ii, row) in c.iter_mut().enumerate() {
        row.copy_from_slice(&acc[ii * tn..ii * tn + NR]);
    }
    for kk in 0..kc {
        let ap: &[T; MR] = a[kk * tm..kk * tm + MR].try_into().unwrap();
        let bp: &[T; NR] = b[kk * tn..kk * tn + NR].try_into().unwrap();
        for ii in 0..MR {
            let av = ap[ii];
            for jj in 0..NR {
                c[ii][jj] += av * bp[jj];
            }
        }
    }
    for (ii, row) in c.iter().enumerate() {
        acc[ii * tn..ii * tn + NR].copy_from_slice(row);
    }
}
