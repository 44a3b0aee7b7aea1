//! Seedable, splittable random streams.
//!
//! Every consumer of randomness derives its own [`StreamKey`] from the run
//! seed plus a tag path (e.g. `seed / "train" / epoch / sequence`). Streams are
//! ChaCha8 instances, so results never depend on which thread drew them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Well-known tags for independent substreams.
pub mod tag {
    pub const SIMULATE: u64 = 0x5349_4d55;
    pub const TRAIN: u64 = 0x5452_4149;
    pub const NOISE_Z: u64 = 0x4e5a;
    pub const NOISE_EPS: u64 = 0x4e45;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const INIT: u64 = 0x494e_4954;
    pub const EVAL: u64 = 0x4556_414c;
    pub const GENERATE: u64 = 0x4745_4e45;
    pub const PREDICT: u64 = 0x5052_4544;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const HOLDOUT: u64 = 0x484f_4c44;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A node in the stream derivation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(splitmix64(seed))
    }

    pub fn derive(self, tag: u64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(tag)))
    }

    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn value(self) -> u64 {
        self.0
    }
}
