//! Deterministic random-stream derivation.
//!
//! Every random draw in a run comes from a stream keyed by a path of integers
//! (master seed, stage, target, replicate index, ...). A task's stream depends only on
//! its key, so results do not depend on scheduling or on the number of threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels used for the top-level key component.
pub mod stage {
    pub const GROUP_PARTITION: u64 = 1;
    pub const GROUP_SCREEN: u64 = 2;
    pub const INDIVIDUAL_SCREEN: u64 = 3;
    pub const FINAL_TEST: u64 = 4;
    pub const CV_FOLDS: u64 = 5;
    pub const REPLICATE: u64 = 6;
}

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the stream at `path` below `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(master), |h, &part| mix(h.rotate_left(23) ^ mix(part)))
}

pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
