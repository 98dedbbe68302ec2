//! Order-preserving parallel map with a sequential fallback.
//!
//! Candidate evaluation, demonstration generation and benchmark cells are all
//! embarrassingly parallel with a deterministic ordered gather, so both code
//! paths produce identical output. The `parallel` feature (default) backs
//! [`map_ordered`] with rayon; without it the crate is fully sequential.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to every item, returning results in input order. Runs on the
/// rayon pool when the `parallel` feature is enabled.
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Always-sequential variant of [`map_ordered`]; reference path for
/// equivalence tests and benchmarks.
pub fn map_ordered_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Runs `f` inside a rayon pool of `jobs` threads; `None` keeps the global
/// pool. Sequential builds run `f` directly, ignoring `jobs`.
pub fn run_with_jobs<R, F>(jobs: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        match jobs {
            Some(n) if n >= 1 => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("rayon pool construction")
                .install(f),
            _ => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        f()
    }
}
