//! Result rows and their CSV / JSON encodings.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::Result;

/// One timed layer/engine run, or a suite aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub layer: String,
    pub engine: String,
    pub dtype: String,
    pub batch: usize,
    pub flops: u64,
    pub seconds: f64,
    pub gflops: f64,
    /// Percent of the `--peak` rate, when one was given.
    pub peak_pct: Option<f64>,
    /// Largest deviation from the direct engine, when verifying.
    pub max_abs_err: Option<f64>,
}

impl BenchResult {
    pub fn new(
        layer: &str,
        engine: &str,
        dtype: &str,
        batch: usize,
        flops: u64,
        seconds: f64,
        peak: Option<f64>,
    ) -> Self {
        let rate = crate::gflops(flops, seconds);
        Self {
            layer: layer.to_string(),
            engine: engine.to_string(),
            dtype: dtype.to_string(),
            batch,
            flops,
            seconds,
            gflops: rate,
            peak_pct: peak.map(|p| crate::peak_pct(rate, p)),
            max_abs_err: None,
        }
    }
}

/// One batch size of a sweep; `ratio_pct` is relative to the sweep's best rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub layer: String,
    pub engine: String,
    pub dtype: String,
    pub batch: usize,
    pub flops: u64,
    pub seconds: f64,
    pub gflops: f64,
    pub ratio_pct: f64,
}

pub fn write_csv<R: Serialize>(rows: &[R], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_json<R: Serialize>(rows: &[R], mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    writeln!(out).map_err(serde_json::Error::io)?;
    Ok(())
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(input: impl Read) -> Result<Vec<R>> {
    Ok(csv::Reader::from_reader(input).deserialize().collect::<Result<_, _>>()?)
}

pub fn read_json<R: for<'de> Deserialize<'de>>(input: impl Read) -> Result<Vec<R>> {
    Ok(serde_json::from_reader(input)?)
}
