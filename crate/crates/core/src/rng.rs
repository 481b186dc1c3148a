//! Seed derivation helpers. Every stochastic component owns a ChaCha stream
//! derived from a base seed and a stream label, so results never depend on
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over raw bytes, seeded.
pub fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ mix64(seed);
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derive an independent seed for a named stream.
pub fn derive_seed(base: u64, stream: &str) -> u64 {
    mix64(fnv1a(base, stream.as_bytes()))
}

pub fn derive_seed_n(base: u64, stream: &str, n: u64) -> u64 {
    mix64(derive_seed(base, stream) ^ mix64(n))
}

pub fn stream(base: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, name))
}

pub fn stream_n(base: u64, name: &str, n: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed_n(base, name, n))
}
