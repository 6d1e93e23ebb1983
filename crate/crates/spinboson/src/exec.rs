//! Execution strategy for embarrassingly parallel work.
//!
//! Ensemble runs, calibration scans and quadrature sums all reduce to "map a
//! pure function over 0..n and collect in index order".  [`map_indexed`]
//! does exactly that, either sequentially or on the rayon thread pool, so
//! results never depend on the strategy and benchmarks can compare the two.

/// How to schedule independent work items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Single-threaded, in index order.
    Sequential,
    /// Rayon work-stealing pool.  Falls back to sequential when the crate is
    /// built without the `parallel` feature.
    #[default]
    Parallel,
}

/// Apply `f` to every index in `0..n`, returning results in index order.
///
/// The output is bitwise identical for both strategies: parallel collection
/// preserves index order, and `f` is required to be a pure function of its
/// index (all our callers derive per-item RNG streams from the index).
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        Execution::Parallel => parallel_map(n, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
