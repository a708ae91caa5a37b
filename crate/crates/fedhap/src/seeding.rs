//! Deterministic RNG stream derivation.
//!
//! Every random decision in a run draws from a stream derived from the run
//! seed plus a list of integer tags (purpose, client id, round, ...). Streams
//! are independent of scheduling, so parallel runs reproduce serial ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags, kept in one place so call sites cannot collide by accident.
pub mod stream {
    pub const INIT_MODEL: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const LOCAL_TRAIN: u64 = 3;
    pub const PROTO_INIT: u64 = 4;
    pub const SYNTH_DATA: u64 = 5;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derives a reproducible RNG for `(seed, tags...)`. Distinct tag lists give
/// statistically independent streams; the same list always gives the same one.
pub fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed ^ 0x5851f42d4c957f2d);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t.wrapping_add(0x2545f4914f6cdd1d)));
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
