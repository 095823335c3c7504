//! Data-parallel execution of independent jobs (seeds, folds, seed tuples).
//!
//! With the `parallel` feature, [`Exec::Parallel`] fans work out over the
//! rayon pool. Without it, every strategy runs sequentially. Results always
//! come back in input order, so output never depends on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when this build can actually run jobs concurrently.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Like [`Exec::map`] but stops at the first error in input order.
    pub fn try_map<T, R, F>(self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Result<R> + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                let results: Vec<Result<R>> = items.par_iter().map(f).collect();
                results.into_iter().collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }
}

/// Runs `op` with at most `workers` threads. `workers <= 1` forces sequential
/// execution regardless of the strategy used inside `op`.
pub fn with_workers<R: Send>(workers: usize, op: impl FnOnce(Exec) -> R + Send) -> Result<R> {
    if workers <= 1 || !Exec::parallel_available() {
        return Ok(op(Exec::Sequential));
    }
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| crate::Error::Backend(format!("thread pool: {e}")))?;
        Ok(pool.install(|| op(Exec::Parallel)))
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok(op(Exec::Sequential))
    }
}
