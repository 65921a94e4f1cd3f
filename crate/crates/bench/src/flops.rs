//! Operation counts and utilization.

use crate::suite::LayerConfig;
use crate::Result;

/// `2 N K C R S P Q`: one multiply and one add per filter tap per output.
pub fn flop_count(cfg: &LayerConfig) -> Result<u64> {
    let g = cfg.geometry()?;
    Ok([g.n, g.k, g.c, g.r, g.s, g.p, g.q].iter().fold(2u64, |acc, &d| acc * d as u64))
}

pub fn gflops(flops: u64, seconds: f64) -> f64 {
    flops as f64 / seconds / 1e9
}

/// Achieved rate as a percentage of `peak_gflops`.
pub fn peak_pct(gflops: f64, peak_gflops: f64) -> f64 {
    100.0 * gflops / peak_gflops
}
