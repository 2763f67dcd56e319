//! Data-parallel execution with a sequential fallback.
//!
//! Every batch loop in the crate (per-vertex kNN, per-tree training, per-query
//! ground truth and search) goes through [`Exec::map`]. Results are always
//! returned in input order, so the output is identical regardless of the
//! execution mode or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a batch of independent work items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Rayon work stealing. Falls back to sequential when the crate is built
    /// without the `parallel` feature.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Applies `f` to every index in `0..len`, collecting results in index order.
    pub fn map<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// Like [`Exec::map`] but each worker gets its own scratch state from `init`.
    pub fn map_init<S, T, I, F>(self, len: usize, init: I, f: F) -> Vec<T>
    where
        T: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..len).into_par_iter().map_init(&init, |s, i| f(s, i)).collect();
        }
        let mut scratch = init();
        (0..len).map(|i| f(&mut scratch, i)).collect()
    }
}

/// Caps the global worker pool. Returns an error if the pool was already built.
#[cfg(feature = "parallel")]
pub fn init_thread_pool(threads: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

#[cfg(not(feature = "parallel"))]
pub fn init_thread_pool(_threads: usize) -> Result<(), String> {
    Ok(())
}
