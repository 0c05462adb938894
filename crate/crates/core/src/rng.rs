//! Seed derivation. Every stochastic step in the engine draws from a ChaCha
//! stream whose seed is a pure function of the experiment seed and a tag
//! path, so results never depend on call order or thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a; stable across platforms and compiler versions, unlike `DefaultHasher`.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

// Fixed tags for the independent random streams of an experiment.
pub const TAG_INIT: u64 = 1;
pub const TAG_DATA: u64 = 2;
pub const TAG_SPLIT: u64 = 3;
pub const TAG_PARTITION: u64 = 4;
pub const TAG_CLIENT: u64 = 5;
