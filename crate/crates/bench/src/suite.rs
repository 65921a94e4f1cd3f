//! Layer-suite files: one layer per line, `name N C H W K R S u v pad_h pad_w`,
//! with `#` starting a comment.

use std::path::Path;

use dnnp::{ConvDesc, ConvGeometry, ElemType, FilterDesc, TensorDesc};
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

/// The bundled five-layer suite.
pub const TABLE2: &str = include_str!("../suites/table2.suite");
const TABLE2_NAME: &str = "table2.suite";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub name: String,
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
}

impl LayerConfig {
    pub fn with_batch(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    pub fn conv_desc(&self) -> Result<ConvDesc> {
        ConvDesc::new(self.u, self.v, self.pad_h, self.pad_w).map_err(|e| self.invalid(e))
    }

    pub fn input_desc(&self, elem: ElemType) -> Result<TensorDesc> {
        TensorDesc::nchw(self.n, self.c, self.h, self.w, elem).map_err(|e| self.invalid(e))
    }

    pub fn filter_desc(&self, elem: ElemType) -> Result<FilterDesc> {
        FilterDesc::new(self.k, self.c, self.r, self.s, elem).map_err(|e| self.invalid(e))
    }

    /// Full geometry, which also validates the configuration.
    pub fn geometry(&self) -> Result<ConvGeometry> {
        let elem = ElemType::F32;
        ConvGeometry::new(&self.input_desc(elem)?, &self.filter_desc(elem)?, &self.conv_desc()?)
            .map_err(|e| self.invalid(e))
    }

    fn invalid(&self, e: dnnp::Error) -> BenchError {
        BenchError::ConfigInvalid { layer: self.name.clone(), reason: e.to_string() }
    }
}

pub fn parse_suite(text: &str) -> Result<Vec<LayerConfig>> {
    let mut layers = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| BenchError::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 12 {
            return Err(parse_err(format!("expected 12 fields, found {}", fields.len())));
        }
        let mut nums = [0usize; 11];
        for (slot, field) in nums.iter_mut().zip(&fields[1..]) {
            *slot = field.parse().map_err(|_| parse_err(format!("`{field}` is not a non-negative integer")))?;
        }
        let [n, c, h, w, k, r, s, u, v, pad_h, pad_w] = nums;
        let cfg = LayerConfig { name: fields[0].to_string(), n, c, h, w, k, r, s, u, v, pad_h, pad_w };
        cfg.geometry()?;
        if layers.iter().any(|l: &LayerConfig| l.name == cfg.name) {
            return Err(parse_err(format!("duplicate layer name `{}`", cfg.name)));
        }
        layers.push(cfg);
    }
    if layers.is_empty() {
        return Err(BenchError::Parse { line: 0, message: "suite defines no layers".into() });
    }
    Ok(layers)
}

/// Reads a suite file. A missing `table2.suite` falls back to the bundled copy.
pub fn load_suite(path: &Path) -> Result<Vec<LayerConfig>> {
    match std::fs::read_to_string(path) {
        Ok(text) => parse_suite(&text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound && path.file_name().is_some_and(|f| f == TABLE2_NAME) => {
            parse_suite(TABLE2)
        }
        Err(e) => Err(BenchError::Io { path: path.display().to_string(), source: e }),
    }
}
