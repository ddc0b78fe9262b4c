//! Thread-pool executor. Results come back in index order, so reductions
//! over them are deterministic regardless of the thread count.

use anyhow::{Context, Result};
use motioncap_core::trainer::Executor;
use rayon::prelude::*;

pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .context("building thread pool")?;
        Ok(Self { pool })
    }

    /// Honours the optional `THREADS` environment variable (all cores otherwise).
    pub fn from_env() -> Result<Self> {
        let threads = match std::env::var("THREADS") {
            Ok(v) => v.trim().parse::<usize>().with_context(|| format!("THREADS={v:?} is not a count"))?,
            Err(_) => 0,
        };
        Self::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Parallel {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}
