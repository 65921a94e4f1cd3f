//! Batched 2-D convolution: forward, backward-data, backward-filter and
//! backward-bias, each available on three engines.
//!
//! Output extents are `P = ceil((H - R + 1 + 2 pad_h) / u)` and likewise for
//! `Q`. Output pixel `(p, q)` with filter tap `(r, s)` reads input row
//! `p u + R - r - 1 - pad_h` in convolution mode (the filter is flipped) or
//! `p u + r - pad_h` in cross-correlation mode; reads outside the image are
//! zero.

mod direct;
mod explicit;
mod implicit;

use std::fmt;
use std::str::FromStr;

pub use explicit::{lower_explicit, Lowered};
pub use implicit::{implicit_provider, ImplicitProvider};

use crate::tensor::{TensorDesc, TensorView, TensorViewMut};
use crate::{Context, ElemType, Error, Result, Scalar};

/// Filter bank geometry: `k` output maps, `c` input maps, `r x s` taps,
/// stored densely in KCRS order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FilterDesc {
    k: usize,
    c: usize,
    r: usize,
    s: usize,
    elem_type: ElemType,
}

impl FilterDesc {
    pub fn new(k: usize, c: usize, r: usize, s: usize, elem_type: ElemType) -> Result<Self> {
        if [k, c, r, s].contains(&0) {
            return Err(Error::ZeroExtent([k, c, r, s]));
        }
        Ok(Self { k, c, r, s, elem_type })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.k, self.c, self.r, self.s]
    }

    pub fn elem_type(&self) -> ElemType {
        self.elem_type
    }

    pub fn strides(&self) -> [usize; 4] {
        [self.c * self.r * self.s, self.r * self.s, self.s, 1]
    }

    pub fn len(&self) -> usize {
        self.k * self.c * self.r * self.s
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn check_filter_buffer<T: Scalar>(desc: &FilterDesc, len: usize) -> Result<()> {
    if desc.elem_type != T::ELEM_TYPE {
        return Err(Error::ElemTypeMismatch { desc: desc.elem_type, buffer: T::ELEM_TYPE });
    }
    if len < desc.len() {
        return Err(Error::BufferTooSmall { len, origin: 0, min: 0, max: desc.len() as isize - 1 });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct FilterView<'a, T> {
    desc: FilterDesc,
    data: &'a [T],
}

impl<'a, T: Scalar> FilterView<'a, T> {
    pub fn new(desc: FilterDesc, data: &'a [T]) -> Result<Self> {
        check_filter_buffer::<T>(&desc, data.len())?;
        Ok(Self { desc, data: &data[..desc.len()] })
    }

    pub fn desc(&self) -> &FilterDesc {
        &self.desc
    }

    pub fn data(&self) -> &'a [T] {
        self.data
    }

    #[inline(always)]
    pub fn get(&self, k: usize, c: usize, r: usize, s: usize) -> T {
        let d = &self.desc;
        self.data[((k * d.c + c) * d.r + r) * d.s + s]
    }
}

#[derive(Debug)]
pub struct FilterViewMut<'a, T> {
    desc: FilterDesc,
    data: &'a mut [T],
}

impl<'a, T: Scalar> FilterViewMut<'a, T> {
    pub fn new(desc: FilterDesc, data: &'a mut [T]) -> Result<Self> {
        check_filter_buffer::<T>(&desc, data.len())?;
        let len = desc.len();
        Ok(Self { desc, data: &mut data[..len] })
    }

    pub fn desc(&self) -> &FilterDesc {
        &self.desc
    }

    pub fn data(&self) -> &[T] {
        self.data
    }

    pub fn as_view(&self) -> FilterView<'_, T> {
        FilterView { desc: self.desc, data: self.data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ConvMode {
    /// Flipped filter taps.
    #[default]
    Convolution,
    CrossCorrelation,
}

/// Padding presets named after the usual 2-D convolution shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PadPreset {
    /// No padding.
    Valid,
    /// `floor(R / 2)`, `floor(S / 2)`; keeps the extent for odd filters at unit stride.
    Same,
    /// `R - 1`, `S - 1`; every partial overlap produces an output.
    Full,
}

impl PadPreset {
    pub fn pads(self, r: usize, s: usize) -> (usize, usize) {
        match self {
            PadPreset::Valid => (0, 0),
            PadPreset::Same => (r / 2, s / 2),
            PadPreset::Full => (r - 1, s - 1),
        }
    }
}

/// Stride, padding, mode and gradient-accumulation settings shared by the
/// forward and backward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvDesc {
    u: usize,
    v: usize,
    pad_h: usize,
    pad_w: usize,
    mode: ConvMode,
    accumulate: bool,
}

impl ConvDesc {
    pub fn new(u: usize, v: usize, pad_h: usize, pad_w: usize) -> Result<Self> {
        if u == 0 || v == 0 {
            return Err(Error::InvalidParam(format!("strides must be at least 1, got ({u}, {v})")));
        }
        Ok(Self { u, v, pad_h, pad_w, mode: ConvMode::Convolution, accumulate: false })
    }

    pub fn with_preset(preset: PadPreset, filter: &FilterDesc, u: usize, v: usize) -> Result<Self> {
        let (pad_h, pad_w) = preset.pads(filter.r, filter.s);
        Self::new(u, v, pad_h, pad_w)
    }

    pub fn mode(mut self, mode: ConvMode) -> Self {
        self.mode = mode;
        self
    }

    /// Add results into the destination instead of overwriting it.
    pub fn accumulate(mut self, accumulate: bool) -> Self {
        self.accumulate = accumulate;
        self
    }

    pub fn strides(&self) -> (usize, usize) {
        (self.u, self.v)
    }

    pub fn pads(&self) -> (usize, usize) {
        (self.pad_h, self.pad_w)
    }

    pub fn conv_mode(&self) -> ConvMode {
        self.mode
    }

    pub fn is_accumulate(&self) -> bool {
        self.accumulate
    }

    /// `(N, K, P, Q)` produced for input `x` and filter `f`.
    pub fn output_dims(&self, x: &TensorDesc, f: &FilterDesc) -> Result<[usize; 4]> {
        Ok(ConvGeometry::new(x, f, self)?.output_dims())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Engine {
    /// The seven-deep loop nest.
    Direct,
    /// Materialize the lowered data matrix, then multiply.
    ExplicitLowering,
    /// Tiled multiply over a virtual lowered matrix.
    ImplicitGemm,
}

impl Engine {
    pub const ALL: [Engine; 3] = [Engine::Direct, Engine::ExplicitLowering, Engine::ImplicitGemm];

    pub fn name(self) -> &'static str {
        match self {
            Engine::Direct => "direct",
            Engine::ExplicitLowering => "explicit",
            Engine::ImplicitGemm => "implicit",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Engine::Direct),
            "explicit" | "explicit_lowering" => Ok(Engine::ExplicitLowering),
            "implicit" | "implicit_gemm" => Ok(Engine::ImplicitGemm),
            other => Err(Error::InvalidParam(format!("unknown engine `{other}`"))),
        }
    }
}

/// `ceil((extent - window + 1 + 2 pad) / stride)`.
pub fn output_extent(extent: usize, window: usize, stride: usize, pad: usize) -> Result<usize> {
    if extent == 0 || window == 0 || stride == 0 {
        return Err(Error::InvalidParam(format!(
            "extent {extent}, window {window} and stride {stride} must be positive"
        )));
    }
    let numer = extent as i64 - window as i64 + 1 + 2 * pad as i64;
    if numer < 1 {
        return Err(Error::EmptyOutput { extent, window, pad });
    }
    Ok((numer as usize).div_ceil(stride))
}

/// Input index read by output index `p` at filter tap `r` (may fall outside
/// the image).
#[inline(always)]
pub fn access(mode: ConvMode, p: usize, stride: usize, window: usize, r: usize, pad: usize) -> isize {
    let tap = match mode {
        ConvMode::Convolution => window - r - 1,
        ConvMode::CrossCorrelation => r,
    };
    (p * stride + tap) as isize - pad as isize
}

/// All eleven convolution parameters plus the derived output extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub r: usize,
    pub s: usize,
    pub u: usize,
    pub v: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub p: usize,
    pub q: usize,
    pub mode: ConvMode,
}

impl ConvGeometry {
    pub fn new(x: &TensorDesc, f: &FilterDesc, conv: &ConvDesc) -> Result<Self> {
        let [n, c, h, w] = x.dims();
        if f.c != c {
            return Err(Error::ShapeMismatch(format!("input has {c} channels, filter expects {}", f.c)));
        }
        if f.elem_type != x.elem_type() {
            return Err(Error::ElemTypeMismatch { desc: f.elem_type, buffer: x.elem_type() });
        }
        let p = output_extent(h, f.r, conv.u, conv.pad_h)?;
        let q = output_extent(w, f.s, conv.v, conv.pad_w)?;
        Ok(Self {
            n,
            c,
            h,
            w,
            k: f.k,
            r: f.r,
            s: f.s,
            u: conv.u,
            v: conv.v,
            pad_h: conv.pad_h,
            pad_w: conv.pad_w,
            p,
            q,
            mode: conv.mode,
        })
    }

    pub fn input_dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn filter_dims(&self) -> [usize; 4] {
        [self.k, self.c, self.r, self.s]
    }

    pub fn output_dims(&self) -> [usize; 4] {
        [self.n, self.k, self.p, self.q]
    }

    pub fn rs(&self) -> usize {
        self.r * self.s
    }

    pub fn crs(&self) -> usize {
        self.c * self.r * self.s
    }

    pub fn pq(&self) -> usize {
        self.p * self.q
    }

    pub fn npq(&self) -> usize {
        self.n * self.p * self.q
    }

    /// Row offset of tap `r` relative to `p u - pad_h`.
    #[inline(always)]
    pub(crate) fn tap_h(&self, r: usize) -> isize {
        match self.mode {
            ConvMode::Convolution => (self.r - 1 - r) as isize,
            ConvMode::CrossCorrelation => r as isize,
        }
    }

    #[inline(always)]
    pub(crate) fn tap_w(&self, s: usize) -> isize {
        match self.mode {
            ConvMode::Convolution => (self.s - 1 - s) as isize,
            ConvMode::CrossCorrelation => s as isize,
        }
    }

    #[inline(always)]
    pub(crate) fn in_row(&self, p: usize, r: usize) -> isize {
        (p * self.u) as isize - self.pad_h as isize + self.tap_h(r)
    }

    #[inline(always)]
    pub(crate) fn in_col(&self, q: usize, s: usize) -> isize {
        (q * self.v) as isize - self.pad_w as isize + self.tap_w(s)
    }
}

/// `y := alpha * conv(x, f) + beta * y`; the accumulate flag forces `beta = 1`.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward<T: Scalar>(
    ctx: &Context,
    x: &TensorView<'_, T>,
    f: &FilterView<'_, T>,
    conv: &ConvDesc,
    engine: Engine,
    y: &mut TensorViewMut<'_, T>,
    alpha: T,
    beta: T,
) -> Result<()> {
    let g = ConvGeometry::new(x.desc(), f.desc(), conv)?;
    y.desc().expect_extents(g.output_dims(), "output")?;
    let beta = if conv.accumulate { T::one() } else { beta };
    ctx.install(|| match engine {
        Engine::Direct => {
            direct::forward(&g, x, f, y, alpha, beta);
            Ok(())
        }
        Engine::ExplicitLowering => explicit::forward(ctx, &g, x, f, y, alpha, beta),
        Engine::ImplicitGemm => implicit::forward(ctx, &g, x, f, y, alpha, beta),
    })
}

/// Gradient of `<dy, conv(x, f)>` with respect to `x`.
pub fn conv_backward_data<T: Scalar>(
    ctx: &Context,
    dy: &TensorView<'_, T>,
    f: &FilterView<'_, T>,
    conv: &ConvDesc,
    engine: Engine,
    dx: &mut TensorViewMut<'_, T>,
) -> Result<()> {
    let g = ConvGeometry::new(dx.desc(), f.desc(), conv)?;
    dy.desc().expect_extents(g.output_dims(), "output gradient")?;
    ctx.install(|| match engine {
        Engine::Direct => {
            direct::backward_data(&g, dy, f, dx, conv.accumulate);
            Ok(())
        }
        Engine::ExplicitLowering => explicit::backward_data(ctx, &g, dy, f, dx, conv.accumulate),
        Engine::ImplicitGemm => implicit::backward_data(ctx, &g, dy, f, dx, conv.accumulate),
    })
}

/// Gradient of `<dy, conv(x, f)>` with respect to `f`.
pub fn conv_backward_filter<T: Scalar>(
    ctx: &Context,
    dy: &TensorView<'_, T>,
    x: &TensorView<'_, T>,
    conv: &ConvDesc,
    engine: Engine,
    df: &mut FilterViewMut<'_, T>,
) -> Result<()> {
    let g = ConvGeometry::new(x.desc(), df.desc(), conv)?;
    dy.desc().expect_extents(g.output_dims(), "output gradient")?;
    ctx.install(|| match engine {
        Engine::Direct => {
            direct::backward_filter(&g, dy, x, df.data, conv.accumulate);
            Ok(())
        }
        Engine::ExplicitLowering => explicit::backward_filter(ctx, &g, dy, x, df.data, conv.accumulate),
        Engine::ImplicitGemm => implicit::backward_filter(ctx, &g, dy, x, df.data, conv.accumulate),
    })
}

/// Per-output-map sum of `dy`, i.e. the `(1, K, 1, 1)` bias gradient.
pub fn conv_backward_bias<T: Scalar>(dy: &TensorView<'_, T>) -> Vec<T> {
    let [n, k, p, q] = dy.dims();
    (0..k)
        .map(|ki| {
            let mut sum = T::zero();
            for ni in 0..n {
                for pi in 0..p {
                    for qi in 0..q {
                        sum += dy.get(ni, ki, pi, qi);
                    }
                }
            }
            sum
        })
        .collect()
}
