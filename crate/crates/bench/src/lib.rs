//! Benchmark and verification harness for the `dnnp` convolution engines.
//!
//! Runs a suite of convolution layers through each engine, reports time,
//! throughput and optional utilization against a peak rate, and checks every
//! engine against the direct engine.

pub mod flops;
pub mod report;
pub mod runner;
pub mod suite;

pub use flops::{flop_count, gflops, peak_pct};
pub use report::{read_csv, read_json, write_csv, write_json, BenchResult, SweepRow};
pub use runner::{batch_sweep, run_suite, verify_failures, RunOptions, SUITE_MEAN, SUITE_TOTAL};
pub use suite::{load_suite, parse_suite, LayerConfig, TABLE2};

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("suite line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("layer `{layer}` is invalid: {reason}")]
    ConfigInvalid { layer: String, reason: String },
    #[error("{failures} result(s) differ from the direct engine by more than {tolerance:e}")]
    VerifyFailed { failures: usize, tolerance: f64 },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Lib(#[from] dnnp::Error),
    #[error("{0}")]
    Usage(String),
}
