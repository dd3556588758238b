//! Seeded, versioned random number generation.
//!
//! Every stochastic operation takes an explicit `u64` seed. Sub-task seeds are
//! derived with a fixed mixing function so that parallel and serial runs draw
//! identical streams.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Name and version recorded in reports next to every seed.
pub const RNG_NAME: &str = "chacha12/rand_chacha-0.3";

pub type LabRng = ChaCha12Rng;

pub fn rng_from_seed(seed: u64) -> LabRng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of task labels.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Stable 64-bit fingerprint of a word slice.
pub fn fingerprint(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |acc, &w| splitmix64(acc ^ w))
}
