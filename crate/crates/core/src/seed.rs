//! Deterministic seed derivation.
//!
//! Every stochastic component receives its own 64-bit seed derived from a
//! parent seed and a stable component name, so adding a component never
//! perturbs the streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `hash64(parent, name)`: FNV-1a over the name, folded with the parent
/// seed through SplitMix64. Stable across platforms and releases.
pub fn derive_seed(parent: u64, name: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix64(parent ^ mix64(h))
}

/// Seed for an indexed sub-stream (client id, round, repetition, ...).
pub fn derive_indexed(parent: u64, name: &str, index: u64) -> u64 {
    mix64(derive_seed(parent, name) ^ mix64(index.wrapping_add(1)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
