//! Deterministic RNG streams.
//!
//! Every random consumer (a particle rollout, a CMA-ES candidate, a ground
//! truth episode) draws from its own ChaCha stream keyed by a path of
//! integers. Streams never depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream labels used to keep independent consumers apart.
pub mod label {
    pub const PARTICLES: u64 = 0x5041_5254;
    pub const CANDIDATES: u64 = 0x4341_4e44;
    pub const TRUTH: u64 = 0x5452_5554;
    pub const EVAL: u64 = 0x4556_414c;
    pub const PLAN: u64 = 0x504c_414e;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a seed and a path of indices into a single 64-bit key.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// RNG for the stream identified by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
