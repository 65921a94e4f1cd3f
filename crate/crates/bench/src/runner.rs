//! Timed suite runs, verification against the direct engine, and batch sweeps.

use std::time::Instant;

use dnnp::{conv_forward, Context, ElemType, Engine, FilterView, Scalar, TensorView, TensorViewMut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::report::{BenchResult, SweepRow};
use crate::suite::LayerConfig;
use crate::{flop_count, BenchError, Result};

/// Aggregate row holding the arithmetic mean of per-layer rates.
pub const SUITE_MEAN: &str = "suite-mean";
/// Aggregate row holding total flops over total time.
pub const SUITE_TOTAL: &str = "suite-total";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub engines: Vec<Engine>,
    pub elem_type: ElemType,
    /// Replaces every layer's N when set.
    pub batch: Option<usize>,
    pub repeats: usize,
    pub warmup: usize,
    pub threads: Option<usize>,
    pub verify: bool,
    pub peak_gflops: Option<f64>,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            engines: Engine::ALL.to_vec(),
            elem_type: ElemType::F32,
            batch: None,
            repeats: 5,
            warmup: 1,
            threads: None,
            verify: false,
            peak_gflops: None,
            seed: 0x5eed,
        }
    }
}

impl RunOptions {
    fn context(&self) -> Result<Context> {
        Ok(match self.threads {
            Some(t) => Context::with_threads(t)?,
            None => Context::new(),
        })
    }

    /// Largest deviation from the direct engine accepted by verification.
    pub fn tolerance(&self) -> f64 {
        match self.elem_type {
            ElemType::F32 => 1e-4,
            ElemType::F64 => 1e-10,
        }
    }
}

/// Inputs and output buffer for one layer.
struct Workload<T> {
    cfg: LayerConfig,
    x: Vec<T>,
    f: Vec<T>,
    y: Vec<T>,
}

impl<T: Scalar> Workload<T> {
    fn new(cfg: &LayerConfig, seed: u64) -> Result<Self> {
        let g = cfg.geometry()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Filter scaled so outputs stay O(1) whatever C R S is.
        let scale = 1.0 / (g.crs() as f64).sqrt();
        let x = (0..g.n * g.c * g.h * g.w).map(|_| T::from_f64(rng.gen_range(-1.0..1.0))).collect();
        let f = (0..g.k * g.crs()).map(|_| T::from_f64(rng.gen_range(-1.0..1.0) * scale)).collect();
        Ok(Self { cfg: cfg.clone(), x, f, y: vec![T::zero(); g.n * g.k * g.pq()] })
    }

    fn run(&mut self, ctx: &Context, engine: Engine) -> Result<f64> {
        let cfg = &self.cfg;
        let g = cfg.geometry()?;
        let xv = TensorView::new(cfg.input_desc(T::ELEM_TYPE)?, &self.x)?;
        let fv = FilterView::new(cfg.filter_desc(T::ELEM_TYPE)?, &self.f)?;
        let yd = dnnp::TensorDesc::nchw(g.n, g.k, g.p, g.q, T::ELEM_TYPE)?;
        let mut yv = TensorViewMut::new(yd, &mut self.y)?;
        let conv = cfg.conv_desc()?;
        let start = Instant::now();
        conv_forward(ctx, &xv, &fv, &conv, engine, &mut yv, T::one(), T::zero())?;
        Ok(start.elapsed().as_secs_f64())
    }

    /// Median wall time over `repeats` runs after `warmup` untimed ones.
    fn time(&mut self, ctx: &Context, engine: Engine, warmup: usize, repeats: usize) -> Result<f64> {
        for _ in 0..warmup {
            self.run(ctx, engine)?;
        }
        let mut times = (0..repeats.max(1)).map(|_| self.run(ctx, engine)).collect::<Result<Vec<_>>>()?;
        times.sort_by(f64::total_cmp);
        let mid = times.len() / 2;
        Ok(if times.len() % 2 == 1 { times[mid] } else { 0.5 * (times[mid - 1] + times[mid]) })
    }
}

fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (Scalar::to_f64(x) - Scalar::to_f64(y)).abs()).fold(0.0, f64::max)
}

fn run_layer<T: Scalar>(ctx: &Context, cfg: &LayerConfig, seed: u64, opts: &RunOptions) -> Result<Vec<BenchResult>> {
    let flops = flop_count(cfg)?;
    let mut work = Workload::<T>::new(cfg, seed)?;
    let mut reference: Option<Vec<T>> = None;
    let mut rows = Vec::new();
    for &engine in &opts.engines {
        let seconds = work.time(ctx, engine, opts.warmup, opts.repeats)?;
        let mut row =
            BenchResult::new(&cfg.name, engine.name(), T::ELEM_TYPE.name(), cfg.n, flops, seconds, opts.peak_gflops);
        if opts.verify {
            if engine == Engine::Direct {
                reference = Some(work.y.clone());
            }
            if reference.is_none() {
                let out = std::mem::take(&mut work.y);
                work.y = vec![T::zero(); out.len()];
                work.run(ctx, Engine::Direct)?;
                reference = Some(std::mem::replace(&mut work.y, out));
            }
            row.max_abs_err = reference.as_deref().map(|r| max_abs_diff(&work.y, r));
        }
        eprintln!("{:>10} {:>9} {:>10.4} s {:>9.2} GFLOP/s", row.layer, row.engine, row.seconds, row.gflops);
        rows.push(row);
    }
    Ok(rows)
}

fn common_batch(rows: &[&BenchResult]) -> usize {
    match rows.first() {
        Some(first) if rows.iter().all(|r| r.batch == first.batch) => first.batch,
        _ => 0,
    }
}

/// Per-engine suite rows: mean of layer rates, and total flops over total time.
fn aggregates(rows: &[BenchResult], opts: &RunOptions) -> Vec<BenchResult> {
    let mut out = Vec::new();
    for engine in &opts.engines {
        let mine: Vec<&BenchResult> = rows.iter().filter(|r| r.engine == engine.name()).collect();
        if mine.is_empty() {
            continue;
        }
        let flops: u64 = mine.iter().map(|r| r.flops).sum();
        let seconds: f64 = mine.iter().map(|r| r.seconds).sum();
        let err = mine.iter().filter_map(|r| r.max_abs_err).reduce(f64::max);
        let mut total = BenchResult::new(
            SUITE_TOTAL,
            engine.name(),
            opts.elem_type.name(),
            common_batch(&mine),
            flops,
            seconds,
            opts.peak_gflops,
        );
        total.max_abs_err = err;
        let mut mean = total.clone();
        mean.layer = SUITE_MEAN.to_string();
        mean.gflops = mine.iter().map(|r| r.gflops).sum::<f64>() / mine.len() as f64;
        mean.peak_pct = opts.peak_gflops.map(|p| crate::peak_pct(mean.gflops, p));
        out.push(mean);
        out.push(total);
    }
    out
}

/// Times every layer on every requested engine, then appends the suite
/// aggregate rows.
pub fn run_suite(layers: &[LayerConfig], opts: &RunOptions) -> Result<Vec<BenchResult>> {
    if opts.engines.is_empty() {
        return Err(BenchError::Usage("no engines selected".into()));
    }
    let ctx = opts.context()?;
    let mut rows = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        let cfg = opts.batch.map_or_else(|| layer.clone(), |n| layer.with_batch(n));
        let seed = opts.seed.wrapping_add(i as u64);
        rows.extend(match opts.elem_type {
            ElemType::F32 => run_layer::<f32>(&ctx, &cfg, seed, opts)?,
            ElemType::F64 => run_layer::<f64>(&ctx, &cfg, seed, opts)?,
        });
    }
    let agg = aggregates(&rows, opts);
    rows.extend(agg);
    Ok(rows)
}

/// Rows whose verification error exceeds the tolerance.
pub fn verify_failures(rows: &[BenchResult], tolerance: f64) -> Vec<&BenchResult> {
    rows.iter().filter(|r| r.max_abs_err.is_some_and(|e| e.is_nan() || e > tolerance)).collect()
}

/// Throughput of one layer on one engine across batch sizes.
pub fn batch_sweep(layer: &LayerConfig, batches: &[usize], engine: Engine, opts: &RunOptions) -> Result<Vec<SweepRow>> {
    let ctx = opts.context()?;
    let mut rows = Vec::new();
    for &n in batches {
        let cfg = layer.with_batch(n);
        let seconds = match opts.elem_type {
            ElemType::F32 => Workload::<f32>::new(&cfg, opts.seed)?.time(&ctx, engine, opts.warmup, opts.repeats)?,
            ElemType::F64 => Workload::<f64>::new(&cfg, opts.seed)?.time(&ctx, engine, opts.warmup, opts.repeats)?,
        };
        let flops = flop_count(&cfg)?;
        let rate = crate::gflops(flops, seconds);
        eprintln!("{:>10} N={n:<5} {:>10.4} s {rate:>9.2} GFLOP/s", cfg.name, seconds);
        rows.push(SweepRow {
            layer: cfg.name.clone(),
            engine: engine.name().to_string(),
            dtype: opts.elem_type.name().to_string(),
            batch: n,
            flops,
            seconds,
            gflops: rate,
            ratio_pct: 0.0,
        });
    }
    let best = rows.iter().map(|r| r.gflops).fold(0.0, f64::max);
    for r in &mut rows {
        r.ratio_pct = r.gflops / best * 100.0;
    }
    Ok(rows)
}
