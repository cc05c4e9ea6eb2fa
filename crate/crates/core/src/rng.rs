//! Seed derivation.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream whose
//! seed is derived from a parent seed and a small tuple of stream labels by
//! chaining SplitMix64 finalizers. Substreams never depend on scheduling, so a
//! parallel run and a sequential run consume identical random numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a sequence of labels.
pub fn derive(parent: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(mix64(parent), |acc, &l| mix64(acc ^ mix64(l.wrapping_add(0xA5A5_5A5A))))
}

pub fn stream(parent: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parent, labels))
}
