//! Execution strategy for data-parallel sections.
//!
//! Every embarrassingly parallel loop in the crate (rollout collection,
//! experiment repetitions) is expressed as an index-driven map so that the
//! parallel and sequential paths are interchangeable: work item `i` derives
//! all of its randomness from the index, never from shared mutable state, so
//! both paths produce bit-identical output.
//!
//! With the default `parallel` feature the map runs on the global rayon pool;
//! without it, [`map_range`] degrades to the sequential loop.  The pool size
//! can be pinned through the `STOLQR_THREADS` environment variable (useful
//! for benchmarking and CI), otherwise rayon's default applies.

/// Environment variable that pins the rayon thread-pool size.
pub const THREADS_ENV: &str = "STOLQR_THREADS";

/// Reads `STOLQR_THREADS`, returning `None` when unset or unparsable.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

/// Builds the global rayon pool honouring [`THREADS_ENV`].
///
/// Call once at process start-up.  Errors (pool already built) are ignored:
/// the pool can only be configured once per process, and a pre-existing pool
/// is always usable.  A no-op without the `parallel` feature.
pub fn init_thread_pool() {
    #[cfg(feature = "parallel")]
    if let Some(threads) = threads_from_env() {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

/// Maps `f` over `0..len`, in parallel when the `parallel` feature is on.
///
/// Results are returned in index order regardless of execution order.
pub fn map_range<R, F>(len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_range_serial(len, f)
    }
}

/// Sequential reference implementation of [`map_range`].
///
/// Kept unconditionally available so tests and benchmarks can compare the
/// two paths on any build.
pub fn map_range_serial<R, F>(len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    (0..len).map(f).collect()
}
