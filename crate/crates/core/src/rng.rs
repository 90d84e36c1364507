//! Seed derivation for independent deterministic random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mix a base seed with a path of stream indices, e.g. `(seed, [fold, epoch])`.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(splitmix64(base), |acc, &s| splitmix64(acc ^ splitmix64(s)))
}

pub fn stream_rng(base: u64, stream: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

/// Stream tags, so that different consumers of one seed never collide.
pub mod tag {
    pub const GENERATOR: u64 = 1;
    pub const POPULATION: u64 = 2;
    pub const FOLDS: u64 = 3;
    pub const EPOCH: u64 = 4;
    pub const INIT: u64 = 5;
    pub const INVERSION: u64 = 6;
    pub const BOUNDARY: u64 = 7;
    pub const PROBE: u64 = 8;
}
