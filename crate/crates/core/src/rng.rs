//! Addressable random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by
//! a `(seed, stream)` pair. Sub-streams are derived by hashing a tag into
//! the stream id, so the values a worker sees depend only on its address,
//! never on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, stream: 0 }
    }

    /// Child stream addressed by `tag`.
    pub fn derive(&self, tag: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    /// Child stream addressed by a path of tags.
    pub fn derive_path(&self, tags: &[u64]) -> RngStream {
        tags.iter().fold(*self, |s, &t| s.derive(t))
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// `n` independent standard normal draws.
    pub fn normals(&self, n: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

/// Tags naming the role of a sub-stream.
pub mod tags {
    pub const INIT: u64 = 0x1_0000_0000;
    pub const STEP: u64 = 0x2_0000_0000;
    pub const CHAIN: u64 = 0x3_0000_0000;
    pub const PHANTOM: u64 = 0x4_0000_0000;
    pub const DEGRADE: u64 = 0x5_0000_0000;
    pub const TRAIN: u64 = 0x6_0000_0000;
    pub const WEIGHTS: u64 = 0x7_0000_0000;
    pub const HELD_OUT: u64 = 0x8_0000_0000;
    pub const SAMPLE: u64 = 0x9_0000_0000;
}
