//! Execution strategy for the O(N²) loops.
//!
//! Work is always split into the same index ranges and partial results are
//! combined in index order, so the parallel and sequential paths produce
//! bit-identical output for any worker count.

/// How the pair loops of the coagulation operator are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Uses the ambient rayon pool. Falls back to sequential when the crate
    /// is built without the `parallel` feature.
    #[default]
    Parallel,
}

impl Execution {
    /// Maps `f` over `0..n` and returns the results in index order.
    pub fn map_indexed<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            Execution::Parallel => par_map(n, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Worker count requested through `COAGSTAT_THREADS`, if any.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("COAGSTAT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `f` inside a pool sized from `COAGSTAT_THREADS` (or the rayon
/// default when unset).
#[cfg(feature = "parallel")]
pub fn with_env_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match threads_from_env() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_env_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_preserve_order() {
        let a = Execution::Sequential.map_indexed(1000, |i| (i as f64).sqrt());
        let b = Execution::Parallel.map_indexed(1000, |i| (i as f64).sqrt());
        assert_eq!(a, b);
    }
}
