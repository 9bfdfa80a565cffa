//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from a `ChaCha8Rng` whose
//! seed is derived functionally from a root seed plus a purpose tag and
//! counters. Nothing keeps long-lived RNG state, so replaying any step
//! only needs the root seed and the counters.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64-bit hash. Stable across platforms and releases, unlike
/// `DefaultHasher`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mix a root seed with a purpose tag and counters into a fresh stream seed.
pub fn derive_seed(root: u64, tag: &str, counters: &[u64]) -> u64 {
    let mut h = fnv1a64(tag.as_bytes()) ^ root.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &c in counters {
        h ^= splitmix64(c ^ h);
    }
    h
}

/// RNG for a (root, tag, counters) coordinate.
pub fn rng_for(root: u64, tag: &str, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tag, counters))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
