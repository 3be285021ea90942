//! Batch execution of independent simulations.
//!
//! Simulations are self-contained (no shared mutable state), so benchmark
//! repetitions and property-test schedules fan out across a thread pool.
//! With the `parallel` feature enabled (the default) batches run on rayon;
//! without it they run sequentially. Results always come back in input
//! order, so output is identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `job` over `0..count`, preserving index order in the output.
pub fn map_indexed<T, F>(count: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..count).into_par_iter().map(job).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(job).collect()
    }
}

/// Sequential variant of [`map_indexed`], kept available regardless of
/// features so benchmarks can compare the two paths directly.
pub fn map_indexed_sequential<T, F>(count: usize, job: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..count).map(job).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_input_order() {
        let out = map_indexed(64, |i| i * i);
        let seq = map_indexed_sequential(64, |i| i * i);
        assert_eq!(out, seq);
        assert_eq!(out[10], 100);
    }
}
