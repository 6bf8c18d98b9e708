//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by a base seed plus a path of
//! integer indices (task, run, generation, slot, ...). Streams never depend on
//! execution order, so parallel and serial runs produce identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used when deriving seeds, kept distinct so that no two
/// subsystems ever share a stream.
pub mod stream {
    pub const SUITE: u64 = 0x5355_4954;
    pub const INSTANCE_SHIFT: u64 = 1;
    pub const INSTANCE_ROTATION: u64 = 2;
    pub const INSTANCE_OFFSET: u64 = 3;
    pub const EPISODE: u64 = 0x4550_4953;
    pub const POLICY_STEP: u64 = 0x504f_4c49;
    pub const POLICY_NOISE: u64 = 0x4e4f_4953;
    pub const RANDOM_SEARCH: u64 = 0x5253_5243;
    pub const CMA: u64 = 0x434d_4145;
    pub const GA_INIT: u64 = 0x4741_494e;
    pub const GA_TRAIN: u64 = 0x4741_5452;
    pub const GA_VALID: u64 = 0x4741_5641;
    pub const GA_EVOLVE: u64 = 0x4741_4556;
    pub const BENCH: u64 = 0x4245_4e43;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `base` with an ordered path of indices into a new 64-bit seed.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base), |acc, &p| {
        splitmix64(acc ^ splitmix64(p.wrapping_add(0x632b_e59b_d9b4_e019)))
    })
}

/// Deterministic generator for a derived stream.
pub fn rng(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, path))
}
