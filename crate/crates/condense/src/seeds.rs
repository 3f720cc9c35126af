//! Deterministic random-stream derivation.
//!
//! Every random decision in the toolkit draws from a stream derived from the
//! experiment seed plus an explicit path of integers (purpose tag, outer
//! iteration, class index, evaluation cell, ...). Streams are independent of
//! each other and of execution order, so a run parallelized over evaluation
//! cells produces bit-identical results to a serial run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keeping unrelated streams apart even when their numeric
/// paths coincide.
pub mod tag {
    pub const INIT_SYNTHETIC: u64 = 1;
    pub const NETWORK_INIT: u64 = 2;
    pub const OMEGA: u64 = 3;
    pub const REAL_BATCH: u64 = 4;
    pub const THETA_BATCH: u64 = 5;
    pub const EVAL_SET: u64 = 6;
    pub const EVAL_NET: u64 = 7;
    pub const EVAL_AUG: u64 = 8;
    pub const EVAL_SHUFFLE: u64 = 9;
    pub const CORESET: u64 = 10;
    pub const NAS: u64 = 11;
    pub const NOISE: u64 = 12;
    pub const SYN_BATCH: u64 = 13;
    pub const DIAG: u64 = 14;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a ChaCha stream from `seed` and a path of integers.
///
/// The derivation mixes each path element through a SplitMix64 chain into a
/// 256-bit key, so distinct paths yield uncorrelated streams and the same
/// path always yields the same stream.
pub fn derive(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6a09e667f3bcc908;
    let mut mixed = splitmix64(&mut state);
    for &p in path {
        state ^= p.wrapping_mul(0x2545f4914f6cdd1d).rotate_left(17);
        mixed ^= splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        let word = splitmix64(&mut state) ^ mixed.rotate_left(29);
        chunk.copy_from_slice(&word.to_le_bytes());
        mixed = mixed.wrapping_add(word);
    }
    ChaCha8Rng::from_seed(key)
}

/// Derives a child seed (rather than a full stream) for nesting experiments.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut state = seed ^ 0xbb67ae8584caa73b;
    let mut out = splitmix64(&mut state);
    for &p in path {
        state ^= p.wrapping_mul(0x9e3779b97f4a7c15).rotate_left(23);
        out ^= splitmix64(&mut state);
    }
    out
}
