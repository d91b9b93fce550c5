//! Data-parallel map over independent work items.
//!
//! Every work item gets its own seed derived from the run seed and its index,
//! so results do not depend on how items are scheduled. With the `parallel`
//! feature disabled, or `jobs <= 1`, items run in order on the caller's thread.

use crate::error::{Error, Result};

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for work item `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix(mix(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Applies `f(index, item)` to every item and returns the results in input
/// order, stopping at the first error in index order.
pub fn try_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync + Send,
{
    if jobs == 0 {
        return Err(Error::InvalidParameter("jobs must be at least 1".into()));
    }
    run(items, jobs, f).into_iter().collect()
}

#[cfg(feature = "parallel")]
fn run<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<Result<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync + Send,
{
    use rayon::prelude::*;
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()),
        Err(e) => vec![Err(Error::InvalidParameter(format!("cannot start {jobs} workers: {e}")))],
    }
}

#[cfg(not(feature = "parallel"))]
fn run<T, R, F>(items: &[T], _jobs: usize, f: F) -> Vec<Result<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync + Send,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}
