use funfx_core::Runner;
use rayon::prelude::*;

use crate::error::{CliError, Result};

/// Runs independent tasks on a rayon pool, or inline when single-threaded.
pub struct PoolRunner {
    pool: Option<rayon::ThreadPool>,
}

impl PoolRunner {
    /// `threads = 0` sizes the pool to the machine; `1` runs inline.
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 1 {
            return Ok(Self { pool: None });
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {threads} worker threads: {e}")))?;
        Ok(Self { pool: Some(pool) })
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }
}

impl Runner for PoolRunner {
    fn run<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        match &self.pool {
            None => (0..count).map(f).collect(),
            Some(pool) => {
                let f = &f;
                pool.install(|| (0..count).into_par_iter().map(f).collect())
            }
        }
    }
}
