//! Work distribution for the data-parallel loops (direction sweeps,
//! Monte-Carlo replications, bootstrap draws).
//!
//! With the `parallel` feature (on by default) [`run_indexed`] fans the index
//! range out over a rayon pool; without it, or with `workers == 1`, the same
//! closures run sequentially. Results are collected in index order in both
//! cases, so the output of a computation never depends on the worker count.

/// Runs `f(0), ..., f(n-1)` and collects the results in index order.
///
/// `workers == 1` forces the sequential path; `workers == 0` uses the default
/// pool size; any other value bounds the pool for this call.
#[cfg(feature = "parallel")]
pub fn run_indexed<U, F>(n: usize, workers: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    use rayon::prelude::*;
    if workers == 1 {
        return run_indexed_seq(n, f);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build();
    match pool {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        Err(_) => run_indexed_seq(n, f),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn run_indexed<U, F>(n: usize, _workers: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    run_indexed_seq(n, f)
}

/// Sequential reference implementation of [`run_indexed`]; always available
/// so benchmarks can compare the two paths in one build.
pub fn run_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}
