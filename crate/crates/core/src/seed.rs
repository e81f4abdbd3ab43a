//! Deterministic seed derivation. A worker's stream depends only on the
//! master seed and a stream index, never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, stream: u64) -> u64 {
    mix64(master ^ mix64(stream))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for stream `stream` under `master`.
pub fn stream_rng(master: u64, stream: u64) -> Rng {
    rng_from(derive(master, stream))
}

/// Stream ids reserved for the roles a single run needs.
pub mod streams {
    pub const INIT: u64 = 0x1_0000_0000;
    pub const SAMPLER: u64 = 0x2_0000_0000;
    pub const MODEL: u64 = 0x3_0000_0000;
    pub const EVAL: u64 = 0x4_0000_0000;
    pub const DATA: u64 = 0x5_0000_0000;
}
