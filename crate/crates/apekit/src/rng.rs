//! Seed plumbing. Every stochastic routine takes a `u64` seed and builds a
//! ChaCha20 stream from it; sub-tasks (folds, resamples, replications) get
//! their own seeds through [`derive_seed`] so results never depend on the
//! order in which work units are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

pub fn rng_from(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a parent seed with a domain tag and an index into a child seed.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(tag)).wrapping_add(index))
}

pub mod tags {
    pub const FOLDS: u64 = 1;
    pub const FOLD_FIT: u64 = 2;
    pub const BOOT: u64 = 3;
    pub const BOOT_RETRY: u64 = 4;
    pub const NU: u64 = 5;
    pub const CONTROLS: u64 = 6;
    pub const EPS: u64 = 7;
    pub const ORACLE: u64 = 8;
    pub const LEARNER_R: u64 = 9;
    pub const LEARNER_L: u64 = 10;
    pub const EPOCHS: u64 = 11;
    pub const DIAG_BOOT: u64 = 12;
    pub const INSTRUMENT: u64 = 13;
}
