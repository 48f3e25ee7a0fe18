//! Seed derivation and stable hashing.
//!
//! Every random stream in the crate is keyed by a tuple of integers mixed
//! through SplitMix64, so results never depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a sequence of keys into one 64-bit seed.
pub fn derive(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(seed.wrapping_add(GOLDEN)), |acc, &k| {
        mix64(acc ^ mix64(k.wrapping_add(GOLDEN)))
    })
}

/// FNV-1a, stable across platforms and compiler versions.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Sub-seed for a named pipeline component.
pub fn sub_seed(seed: u64, component: &str) -> u64 {
    derive(seed, &[stable_hash(component)])
}

pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, keys))
}
