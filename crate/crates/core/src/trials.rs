//! Deterministic trial farming.

use std::ops::Range;

use rayon::prelude::*;

use crate::stacks::mix64;

const TRIAL_SALT: u64 = 0xA076_1D64_78BD_642F;
const TRIAL_MUL: u64 = 0xE703_7ED1_A0B4_28DB;

/// Seed of trial `index` under `base`. For a fixed base this is a bijection
/// of the index, so derived seeds never collide.
pub fn derive_trial_seed(base: u64, index: u64) -> u64 {
    mix64(mix64(base ^ TRIAL_SALT) ^ index.wrapping_mul(TRIAL_MUL))
}

/// Evaluate `f(index, seed)` for every trial on a pool of `workers` threads
/// (0 means one per core). Results come back in trial order.
pub fn run_trials<T, F>(count: u64, base: u64, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, u64) -> T + Sync + Send,
{
    run_trial_range(0..count, base, workers, f)
}

/// [`run_trials`] restricted to the trial indices in `range`.
pub fn run_trial_range<T, F>(range: Range<u64>, base: u64, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, u64) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool");
    pool.install(|| range.into_par_iter().map(|i| f(i, derive_trial_seed(base, i))).collect())
}
