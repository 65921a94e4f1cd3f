//! Strided 4-D tensor descriptors and the views that bind them to buffers.
//!
//! A [`TensorDesc`] only describes geometry: extents `(n, c, h, w)` plus one
//! signed element stride per dimension. Any layout whose index map is
//! injective over the extent box is accepted, including negative strides.
//! Buffers are attached at call time through [`TensorView`] and
//! [`TensorViewMut`], which check that every coordinate lands in the buffer.

use std::collections::HashSet;
use std::marker::PhantomData;

use crate::scalar::blend;
use crate::{ElemType, Error, Result, Scalar};

/// Boxes up to this many elements are checked for aliasing exhaustively when
/// the mixed-radix test is inconclusive.
const EXHAUSTIVE_ALIAS_LIMIT: usize = 1 << 22;

/// Memory layout used to derive strides in [`TensorDesc::new`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Nchw,
    Nhwc,
    /// Explicit `(n, c, h, w)` element strides.
    Custom([isize; 4]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorDesc {
    dims: [usize; 4],
    strides: [isize; 4],
    elem_type: ElemType,
}

impl TensorDesc {
    pub fn new(n: usize, c: usize, h: usize, w: usize, layout: Layout, elem_type: ElemType) -> Result<Self> {
        let dims = [n, c, h, w];
        if dims.contains(&0) {
            return Err(Error::ZeroExtent(dims));
        }
        let strides = match layout {
            Layout::Nchw => packed_strides(dims, [0, 1, 2, 3])?,
            Layout::Nhwc => packed_strides(dims, [0, 2, 3, 1])?,
            Layout::Custom(strides) => strides,
        };
        if !strides_injective(&dims, &strides)? {
            return Err(Error::AliasingStrides { dims, strides });
        }
        Ok(Self { dims, strides, elem_type })
    }

    pub fn nchw(n: usize, c: usize, h: usize, w: usize, elem_type: ElemType) -> Result<Self> {
        Self::new(n, c, h, w, Layout::Nchw, elem_type)
    }

    pub fn nhwc(n: usize, c: usize, h: usize, w: usize, elem_type: ElemType) -> Result<Self> {
        Self::new(n, c, h, w, Layout::Nhwc, elem_type)
    }

    /// Same extents and element type, different layout.
    pub fn relayout(&self, layout: Layout) -> Result<Self> {
        let [n, c, h, w] = self.dims;
        Self::new(n, c, h, w, layout, self.elem_type)
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }

    pub fn c(&self) -> usize {
        self.dims[1]
    }

    pub fn h(&self) -> usize {
        self.dims[2]
    }

    pub fn w(&self) -> usize {
        self.dims[3]
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn strides(&self) -> [isize; 4] {
        self.strides
    }

    pub fn elem_type(&self) -> ElemType {
        self.elem_type
    }

    /// Number of logical elements.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline(always)]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> isize {
        n as isize * self.strides[0]
            + c as isize * self.strides[1]
            + h as isize * self.strides[2]
            + w as isize * self.strides[3]
    }

    /// Smallest and largest offsets reached inside the extent box.
    pub fn offset_range(&self) -> (isize, isize) {
        let mut lo = 0isize;
        let mut hi = 0isize;
        for (&d, &s) in self.dims.iter().zip(&self.strides) {
            let reach = (d as isize - 1) * s;
            if reach < 0 {
                lo += reach;
            } else {
                hi += reach;
            }
        }
        (lo, hi)
    }

    /// Buffer length needed by a view whose origin is chosen automatically.
    pub fn span(&self) -> usize {
        let (lo, hi) = self.offset_range();
        (hi - lo) as usize + 1
    }

    pub fn same_extents(&self, other: &TensorDesc) -> bool {
        self.dims == other.dims
    }

    pub(crate) fn expect_extents(&self, dims: [usize; 4], what: &str) -> Result<()> {
        if self.dims == dims {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("{what} has extents {:?}, expected {dims:?}", self.dims)))
        }
    }
}

fn packed_strides(dims: [usize; 4], order: [usize; 4]) -> Result<[isize; 4]> {
    let mut strides = [0isize; 4];
    let mut acc: usize = 1;
    for &axis in order.iter().rev() {
        strides[axis] = isize::try_from(acc).map_err(|_| overflow())?;
        acc = acc.checked_mul(dims[axis]).ok_or_else(overflow)?;
    }
    isize::try_from(acc).map_err(|_| overflow())?;
    Ok(strides)
}

fn overflow() -> Error {
    Error::InvalidParam("tensor extents overflow the address space".into())
}

/// Whether `(i_0, .., i_k) -> sum(i_j * strides[j])` is injective over the box.
///
/// Sorting the live dimensions by |stride| and requiring each stride to
/// exceed the reach of all smaller ones settles the usual layouts at once.
/// Anything else is decided by enumerating the offsets.
pub fn strides_injective(dims: &[usize], strides: &[isize]) -> Result<bool> {
    let mut live: Vec<(usize, isize)> =
        dims.iter().copied().zip(strides.iter().copied()).filter(|&(d, _)| d > 1).collect();
    live.sort_by_key(|&(_, s)| s.unsigned_abs());

    let mut reach: u128 = 0;
    let mut radix_ok = true;
    for &(d, s) in &live {
        let s = s.unsigned_abs() as u128;
        if s <= reach {
            radix_ok = false;
            break;
        }
        reach += s * (d as u128 - 1);
    }
    if reach > isize::MAX as u128 {
        return Err(overflow());
    }
    if radix_ok {
        return Ok(true);
    }
    if live.iter().any(|&(_, s)| s == 0) {
        return Ok(false);
    }

    let count = live.iter().try_fold(1usize, |acc, &(d, _)| acc.checked_mul(d));
    match count {
        Some(count) if count <= EXHAUSTIVE_ALIAS_LIMIT => {
            let mut seen = HashSet::with_capacity(count);
            let mut index = vec![0usize; live.len()];
            for _ in 0..count {
                let off: isize = index.iter().zip(&live).map(|(&i, &(_, s))| i as isize * s).sum();
                if !seen.insert(off) {
                    return Ok(false);
                }
                for (slot, &(d, _)) in index.iter_mut().zip(&live).rev() {
                    *slot += 1;
                    if *slot < d {
                        break;
                    }
                    *slot = 0;
                }
            }
            Ok(true)
        }
        // Too large to enumerate; refuse rather than risk silent aliasing.
        _ => Ok(false),
    }
}

fn check_binding<T: Scalar>(desc: &TensorDesc, len: usize, origin: usize) -> Result<()> {
    if desc.elem_type != T::ELEM_TYPE {
        return Err(Error::ElemTypeMismatch { desc: desc.elem_type, buffer: T::ELEM_TYPE });
    }
    let (min, max) = desc.offset_range();
    let lo = origin as isize + min;
    let hi = origin as isize + max;
    if lo < 0 || hi >= len as isize {
        return Err(Error::BufferTooSmall { len, origin, min, max });
    }
    Ok(())
}

fn auto_origin(desc: &TensorDesc) -> usize {
    (-desc.offset_range().0) as usize
}

/// Read-only tensor bound to a caller-owned buffer.
///
/// `origin` is the buffer index of coordinate `(0, 0, 0, 0)`. The default
/// origin places the lowest reachable offset at index 0, which is what makes
/// negative strides usable.
#[derive(Debug, Clone, Copy)]
pub struct TensorView<'a, T> {
    desc: TensorDesc,
    data: &'a [T],
    origin: usize,
}

impl<'a, T: Scalar> TensorView<'a, T> {
    pub fn new(desc: TensorDesc, data: &'a [T]) -> Result<Self> {
        Self::with_origin(desc, data, auto_origin(&desc))
    }

    pub fn with_origin(desc: TensorDesc, data: &'a [T], origin: usize) -> Result<Self> {
        check_binding::<T>(&desc, data.len(), origin)?;
        Ok(Self { desc, data, origin })
    }

    pub fn desc(&self) -> &TensorDesc {
        &self.desc
    }

    pub fn dims(&self) -> [usize; 4] {
        self.desc.dims
    }

    pub fn data(&self) -> &'a [T] {
        self.data
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    #[inline(always)]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        (self.origin as isize + self.desc.offset(n, c, h, w)) as usize
    }

    #[inline(always)]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    /// Values in logical NCHW order.
    pub fn to_vec_nchw(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.desc.len());
        for_each_coord(self.desc.dims, |n, c, h, w| out.push(self.get(n, c, h, w)));
        out
    }
}

/// Mutable tensor bound to a caller-owned buffer.
#[derive(Debug)]
pub struct TensorViewMut<'a, T> {
    desc: TensorDesc,
    data: &'a mut [T],
    origin: usize,
}

impl<'a, T: Scalar> TensorViewMut<'a, T> {
    pub fn new(desc: TensorDesc, data: &'a mut [T]) -> Result<Self> {
        let origin = auto_origin(&desc);
        Self::with_origin(desc, data, origin)
    }

    pub fn with_origin(desc: TensorDesc, data: &'a mut [T], origin: usize) -> Result<Self> {
        check_binding::<T>(&desc, data.len(), origin)?;
        Ok(Self { desc, data, origin })
    }

    pub fn desc(&self) -> &TensorDesc {
        &self.desc
    }

    pub fn dims(&self) -> [usize; 4] {
        self.desc.dims
    }

    pub fn as_view(&self) -> TensorView<'_, T> {
        TensorView { desc: self.desc, data: self.data, origin: self.origin }
    }

    #[inline(always)]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        (self.origin as isize + self.desc.offset(n, c, h, w)) as usize
    }

    #[inline(always)]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let i = self.index(n, c, h, w);
        self.data[i] = value;
    }

    #[inline(always)]
    pub fn get_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut T {
        let i = self.index(n, c, h, w);
        &mut self.data[i]
    }

    /// Sets every in-box element to `value`; bytes outside the box are untouched.
    pub fn fill(&mut self, value: T) {
        for_each_coord(self.desc.dims, |n, c, h, w| self.set(n, c, h, w, value));
    }

    pub fn to_vec_nchw(&self) -> Vec<T> {
        self.as_view().to_vec_nchw()
    }

    /// Shareable handle for kernels whose workers write disjoint coordinates.
    pub(crate) fn shared(&mut self) -> SharedTensor<'_, T> {
        SharedTensor { ptr: self.data.as_mut_ptr(), desc: self.desc, origin: self.origin, _marker: PhantomData }
    }
}

/// Raw view of a [`TensorViewMut`] that several workers may write through.
///
/// Callers must ensure that no two threads touch the same coordinate; the
/// injective index map then guarantees they never touch the same element.
pub(crate) struct SharedTensor<'a, T> {
    ptr: *mut T,
    desc: TensorDesc,
    origin: usize,
    _marker: PhantomData<&'a mut [T]>,
}

// SAFETY: access goes through `update`, whose contract requires disjoint
// coordinates per thread; bounds were validated when the view was built.
unsafe impl<T: Send> Send for SharedTensor<'_, T> {}
unsafe impl<T: Send> Sync for SharedTensor<'_, T> {}

impl<T: Scalar> SharedTensor<'_, T> {
    pub(crate) fn dims(&self) -> [usize; 4] {
        self.desc.dims
    }

    /// Applies `f` to the element at `(n, c, h, w)`.
    ///
    /// # Safety
    /// The coordinate must be in the box, and no other thread may access it
    /// during the call.
    #[inline(always)]
    pub(crate) unsafe fn update(&self, n: usize, c: usize, h: usize, w: usize, f: impl FnOnce(T) -> T) {
        let i = (self.origin as isize + self.desc.offset(n, c, h, w)) as usize;
        let p = self.ptr.add(i);
        *p = f(*p);
    }
}

/// Calls `f(n, c, h, w)` for every coordinate in NCHW order.
#[inline]
pub fn for_each_coord(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize)) {
    let [n, c, h, w] = dims;
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    f(ni, ci, hi, wi);
                }
            }
        }
    }
}

fn overlaps<T>(a: &[T], b: &[T]) -> bool {
    let a = a.as_ptr_range();
    let b = b.as_ptr_range();
    a.start < b.end && b.start < a.end
}

/// `dst := alpha * src + beta * dst`, coordinate-wise. With `(1, 0)` this
/// converts between layouts.
pub fn transform<T: Scalar>(src: &TensorView<'_, T>, dst: &mut TensorViewMut<'_, T>, alpha: T, beta: T) -> Result<()> {
    if !src.desc.same_extents(&dst.desc) {
        return Err(Error::ShapeMismatch(format!("transform source {:?} vs destination {:?}", src.dims(), dst.dims())));
    }
    if overlaps(src.data, dst.data) {
        return Err(Error::OverlappingBuffers);
    }
    for_each_coord(src.dims(), |n, c, h, w| {
        let v = src.get(n, c, h, w);
        let d = dst.get_mut(n, c, h, w);
        *d = blend(alpha, v, beta, *d);
    });
    Ok(())
}

/// `out := alpha * bias + beta * out`, where every bias extent either matches
/// `out` or is 1 and broadcast.
pub fn add_broadcast<T: Scalar>(
    bias: &TensorView<'_, T>,
    out: &mut TensorViewMut<'_, T>,
    alpha: T,
    beta: T,
) -> Result<()> {
    let bd = bias.dims();
    let od = out.dims();
    if bd.iter().zip(&od).any(|(&b, &o)| b != o && b != 1) {
        return Err(Error::IncompatibleBroadcast { bias: bd, out: od });
    }
    let pick = |i: usize, axis: usize| if bd[axis] == 1 { 0 } else { i };
    for_each_coord(od, |n, c, h, w| {
        let b = bias.get(pick(n, 0), pick(c, 1), pick(h, 2), pick(w, 3));
        let d = out.get_mut(n, c, h, w);
        *d = blend(alpha, b, beta, *d);
    });
    Ok(())
}
