//! Seed derivation for independent, schedule-free random streams.
//!
//! Every parallel job (a tree, a realisation, a fold, a candidate evaluation)
//! gets its own generator whose seed is a pure function of the run seed and the
//! job's coordinates, so results never depend on which thread ran what.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type JobRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a path of job coordinates.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn job_rng(seed: u64, path: &[u64]) -> JobRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
