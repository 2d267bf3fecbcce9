//! Seed derivation.
//!
//! A single master seed expands into independent per-purpose seeds with
//! SplitMix64: `derive(master, stream) = splitmix64(master ^ splitmix64(stream))`.
//! Nested derivations (`derive(derive(master, TARGETS), image_index)`) give
//! per-item seeds. Every stochastic routine in the crate takes such a seed
//! explicitly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const GENERATOR: u64 = 1;
pub const FLOW: u64 = 2;
pub const MEAN_LATENT: u64 = 3;
pub const TARGETS: u64 = 4;
pub const CORRUPTION: u64 = 5;
pub const DATASET: u64 = 6;
pub const DECODER: u64 = 7;
pub const GAUSSIANIZATION: u64 = 8;
pub const FLOW_SAMPLES: u64 = 9;
pub const SOLVER: u64 = 10;
pub const PERTURBATION: u64 = 11;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
