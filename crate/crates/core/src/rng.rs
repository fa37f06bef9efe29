//! Seed derivation.
//!
//! Every random draw in a run comes from a ChaCha stream keyed by the
//! experiment seed plus a path of stream labels, so independent consumers
//! (users, epochs, partitioners) never share generator state and the
//! order in which they run does not matter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels. Values are part of the reproducibility contract.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const LOCAL_TRAIN: u64 = 3;
    pub const EVAL_SUBSET: u64 = 4;
    pub const SUBSAMPLE: u64 = 5;
    pub const KNOWLEDGE: u64 = 6;
    pub const SYNTHETIC: u64 = 7;
    pub const TRIAL: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a path of labels into a single 64-bit key.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

/// A generator for the stream identified by `seed` and `path`.
pub fn rng_for(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let key = derive_seed(seed, path);
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(key.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
