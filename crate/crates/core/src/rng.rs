//! Seed derivation for reproducible, schedule-independent randomness.
//!
//! Every random draw in the workbench comes from a ChaCha stream whose key is
//! a mix of the master seed and a path of indices (purpose, realization,
//! tap, ...). Two draws with the same path are bit-identical regardless of
//! the order or thread they run on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep independent consumers of one master seed apart.
pub mod purpose {
    pub const FADING: u64 = 0x4641_4445;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const FRAME: u64 = 0x4652_414d;
    pub const SPEED: u64 = 0x5350_4544;
    pub const TRAIN_SET: u64 = 0x5452_4e53;
    pub const TEST_SET: u64 = 0x5445_5354;
    pub const DOPPLER_SET: u64 = 0x4450_4c52;
    pub const STATS_SET: u64 = 0x5354_4154;
    pub const INIT: u64 = 0x494e_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const MODEL: u64 = 0x4d4f_4445;
    pub const AUTOENCODER: u64 = 0x4145_4e43;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `path` into `master`, one splitmix round per element.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
