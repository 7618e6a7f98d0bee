//! Seed derivation. Every stochastic choice in the crate draws from a
//! `ChaCha8Rng` seeded by mixing a run seed with stream identifiers, so a
//! given (seed, image, step) always yields the same numbers regardless of
//! what else ran before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with any number of stream identifiers.
pub fn derive_seed(base: u64, streams: &[u64]) -> u64 {
    streams
        .iter()
        .fold(splitmix64(base), |acc, &s| splitmix64(acc ^ splitmix64(s)))
}

pub fn rng_from(base: u64, streams: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, streams))
}
