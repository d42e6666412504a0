//! Seed derivation and counter-keyed random streams.
//!
//! Every stochastic step takes an explicit stream. Streams for independent
//! pieces of work (replicates, posterior draws, population units) are derived
//! from a master seed by hashing, never by sharing a generator, so results do
//! not depend on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// splitmix64 finaliser.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Folds a path of integers into a child seed of `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(master), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Stream seeded from `master`.
pub fn stream(master: u64) -> StreamRng {
    StreamRng::seed_from_u64(master)
}

/// Stream keyed by `(seed, draw, unit)`.
///
/// Posterior prediction uses one of these per population unit and posterior
/// draw, which makes the output invariant to the order of population records.
pub fn keyed_stream(seed: u64, draw: u64, unit: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&draw.to_le_bytes());
    key[16..24].copy_from_slice(&unit.to_le_bytes());
    key[24..].copy_from_slice(&mix64(seed ^ draw.rotate_left(17) ^ unit.rotate_left(41)).to_le_bytes());
    StreamRng::from_seed(key)
}
