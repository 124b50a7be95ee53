//! Deterministic seed derivation for independent random streams.
//!
//! Every source of randomness (member initialization, epoch shuffles,
//! per-step mask/label draws, sweep points) derives its own seed from the
//! run seed plus a stream tag, so streams stay decorrelated and reordering
//! one loop never perturbs another.

pub const STREAM_INIT: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
pub const STREAM_STEP: u64 = 3;
pub const STREAM_DATASET: u64 = 4;
pub const STREAM_SPLIT: u64 = 5;
pub const STREAM_SWEEP: u64 = 6;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Folds a stream tag and indices into the base seed.
pub fn derive(seed: u64, stream: &[u64]) -> u64 {
    let mut state = splitmix64(seed);
    for &x in stream {
        state = splitmix64(state.wrapping_add(x));
    }
    state
}
