//! Seed derivation for reproducible sub-streams.
//!
//! Every random decision in the library draws from a ChaCha stream whose seed
//! is derived from the run seed plus a context path (experiment tag, iteration
//! index, query index, ...). Deriving instead of sharing one generator keeps
//! results identical whether iterations execute serially or in parallel.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche behavior for cheap seed mixing.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` and a context path.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut acc = mix64(base);
    for &p in parts {
        acc = mix64(acc ^ mix64(p));
    }
    acc
}

/// A generator seeded from `base` and a context path.
pub fn derived_rng(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}
