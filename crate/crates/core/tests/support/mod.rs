#![allow(dead_code)]

use dnnp::{
    conv_backward_data, conv_backward_filter, conv_forward, Context, ConvDesc, ConvMode, Engine, FilterDesc,
    FilterView, FilterViewMut, Scalar, TensorDesc, TensorView, TensorViewMut,
};
use rand::Rng;

/// One convolution instance with dense NCHW tensors and KCRS filters.
#[derive(Debug, Clone, Copy)]
pub struct Problem {
    pub x: [usize; 4],
    pub f: [usize; 4],
    pub conv: ConvDesc,
}

impl Problem {
    pub fn y(&self) -> [usize; 4] {
        self.conv.output_dims(&desc::<f64>(self.x), &filter::<f64>(self.f)).unwrap()
    }
}

pub fn desc<T: Scalar>(d: [usize; 4]) -> TensorDesc {
    TensorDesc::nchw(d[0], d[1], d[2], d[3], T::ELEM_TYPE).unwrap()
}

pub fn nhwc<T: Scalar>(d: [usize; 4]) -> TensorDesc {
    TensorDesc::nhwc(d[0], d[1], d[2], d[3], T::ELEM_TYPE).unwrap()
}

pub fn filter<T: Scalar>(d: [usize; 4]) -> FilterDesc {
    FilterDesc::new(d[0], d[1], d[2], d[3], T::ELEM_TYPE).unwrap()
}

pub fn len(d: [usize; 4]) -> usize {
    d.iter().product()
}

pub fn uniform<T: Scalar>(rng: &mut impl Rng, n: usize) -> Vec<T> {
    (0..n).map(|_| T::from_f64(rng.gen_range(-1.0..1.0))).collect()
}

/// Random instance with every extent at most `max_dim`, filters at most
/// `max_filter`, strides at most `max_stride` and pads at most `max_pad`.
pub fn random_problem(
    rng: &mut impl Rng,
    max_dim: usize,
    max_filter: usize,
    max_stride: usize,
    max_pad: usize,
) -> Problem {
    let r = rng.gen_range(1..=max_filter);
    let s = rng.gen_range(1..=max_filter);
    let pad_h = rng.gen_range(0..=max_pad);
    let pad_w = rng.gen_range(0..=max_pad);
    let h = rng.gen_range(r.saturating_sub(2 * pad_h).max(1)..=max_dim.max(r));
    let w = rng.gen_range(s.saturating_sub(2 * pad_w).max(1)..=max_dim.max(s));
    let c = rng.gen_range(1..=max_dim);
    let x = [rng.gen_range(1..=max_dim), c, h, w];
    let f = [rng.gen_range(1..=max_dim), c, r, s];
    let mode = if rng.gen() { ConvMode::Convolution } else { ConvMode::CrossCorrelation };
    let conv =
        ConvDesc::new(rng.gen_range(1..=max_stride), rng.gen_range(1..=max_stride), pad_h, pad_w).unwrap().mode(mode);
    Problem { x, f, conv }
}

pub fn forward<T: Scalar>(ctx: &Context, engine: Engine, p: &Problem, x: &[T], f: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); len(p.y())];
    conv_forward(
        ctx,
        &TensorView::new(desc::<T>(p.x), x).unwrap(),
        &FilterView::new(filter::<T>(p.f), f).unwrap(),
        &p.conv,
        engine,
        &mut TensorViewMut::new(desc::<T>(p.y()), &mut y).unwrap(),
        T::one(),
        T::zero(),
    )
    .unwrap();
    y
}

pub fn backward_data<T: Scalar>(ctx: &Context, engine: Engine, p: &Problem, dy: &[T], f: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); len(p.x)];
    conv_backward_data(
        ctx,
        &TensorView::new(desc::<T>(p.y()), dy).unwrap(),
        &FilterView::new(filter::<T>(p.f), f).unwrap(),
        &p.conv,
        engine,
        &mut TensorViewMut::new(desc::<T>(p.x), &mut dx).unwrap(),
    )
    .unwrap();
    dx
}

pub fn backward_filter<T: Scalar>(ctx: &Context, engine: Engine, p: &Problem, dy: &[T], x: &[T]) -> Vec<T> {
    let mut df = vec![T::zero(); len(p.f)];
    conv_backward_filter(
        ctx,
        &TensorView::new(desc::<T>(p.y()), dy).unwrap(),
        &TensorView::new(desc::<T>(p.x), x).unwrap(),
        &p.conv,
        engine,
        &mut FilterViewMut::new(filter::<T>(p.f), &mut df).unwrap(),
    )
    .unwrap();
    df
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub const FD_STEP: f64 = 1e-5;

/// Compares `analytic` with central differences of `loss` around `at`.
/// Returns the first failing coordinate.
pub fn check_gradient(
    at: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    rel: f64,
    abs: f64,
) -> Result<(), String> {
    let mut probe = at.to_vec();
    for i in 0..at.len() {
        probe[i] = at[i] + FD_STEP;
        let up = loss(&probe);
        probe[i] = at[i] - FD_STEP;
        let down = loss(&probe);
        probe[i] = at[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = (numeric - analytic[i]).abs();
        if err > abs && err > rel * numeric.abs().max(analytic[i].abs()) {
            return Err(format!("coordinate {i}: analytic {} vs numeric {numeric}", analytic[i]));
        }
    }
    Ok(())
}
