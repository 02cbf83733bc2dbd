//! Seeded random streams.
//!
//! Every stochastic component draws from ChaCha8 (the 8-round ChaCha stream
//! cipher used as a counter-based generator). Independent streams are
//! obtained by mixing a base seed with stream coordinates through the
//! SplitMix64 finaliser, so the sequence seen by e.g. the dropout mask of
//! layer 2 in epoch 7 does not depend on how many numbers other components
//! consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 output function.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for the stream addressed by `coords` under `base`.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(base), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}
