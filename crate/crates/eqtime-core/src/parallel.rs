//! Data-parallel fan-out helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch to rayon;
//! without it they run sequentially with identical semantics. Results
//! are always collected in input order, so outputs are bit-identical
//! across both modes and any thread count: each work item is fully
//! independent and carries its own RNG stream.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map over items, in parallel when enabled. Output order matches input.
pub fn maybe_par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
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

/// Map over an index range, in parallel when enabled.
pub fn maybe_par_map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Always-sequential twin of [`maybe_par_map`], kept for benchmark
/// comparisons against the parallel path.
pub fn seq_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Always-sequential twin of [`maybe_par_map_range`].
pub fn seq_map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}
