use rayon::ThreadPool;

use crate::gemm::TileConfig;
use crate::{Error, Result};

/// Default cap on a materialized lowered data matrix (explicit engine).
pub const DEFAULT_LOWERING_LIMIT: usize = 512 << 20;

/// Library handle: worker threads, matmul tiling, and the lowering budget.
///
/// A context is immutable once built and may be shared between threads.
#[derive(Debug)]
pub struct Context {
    pool: Option<ThreadPool>,
    threads: usize,
    tile: TileConfig,
    lowering_limit: usize,
}

impl Default for Context {
    fn default() -> Self {
        Self::new()
    }
}

impl Context {
    /// Context running on the global rayon pool.
    pub fn new() -> Self {
        Self {
            pool: None,
            threads: rayon::current_num_threads(),
            tile: TileConfig::default(),
            lowering_limit: DEFAULT_LOWERING_LIMIT,
        }
    }

    /// Context with a dedicated pool of `threads` workers.
    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(Error::InvalidParam("thread count must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidParam(format!("cannot start thread pool: {e}")))?;
        Ok(Self { pool: Some(pool), threads, ..Self::new() })
    }

    pub fn tile_config(mut self, tile: TileConfig) -> Self {
        self.tile = tile;
        self
    }

    pub fn lowering_limit(mut self, bytes: usize) -> Self {
        self.lowering_limit = bytes;
        self
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn tile(&self) -> &TileConfig {
        &self.tile
    }

    pub fn lowering_limit_bytes(&self) -> usize {
        self.lowering_limit
    }

    pub(crate) fn install<R, F>(&self, op: F) -> R
    where
        F: FnOnce() -> R + Send,
        R: Send,
    {
        match &self.pool {
            Some(pool) => pool.install(op),
            None => op(),
        }
    }
}
