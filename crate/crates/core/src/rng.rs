//! Hierarchical seed derivation.
//!
//! Every random stream is derived from one command seed by mixing in a path of
//! indices (cluster, channel, ...), so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ModelRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn child_seed(parent: u64, index: u64) -> u64 {
    mix(mix(parent) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(parent, |s, &i| child_seed(s, i))
}

pub fn rng_for(parent: u64, path: &[u64]) -> ModelRng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, path))
}
