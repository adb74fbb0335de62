//! Portable seeded randomness.
//!
//! All randomness flows from xoshiro256** generators. A generator for a
//! given `(seed, stream)` pair is seeded by running SplitMix64 over
//! `seed ^ mix(stream)`, so independent consumers (initialisation, data
//! generation, shuffling, replay) draw from separate streams and adding a
//! consumer never perturbs the others.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type Rng = Xoshiro256StarStar;

/// Stream labels used across the crate.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const REPLAY: u64 = 4;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Generator for a labelled sub-stream of `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(seed ^ splitmix64(stream))
}
