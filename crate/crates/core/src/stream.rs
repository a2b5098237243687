//! Deterministic random streams.
//!
//! A [`RandomStream`] is a `(seed, substream)` pair. It names a ChaCha8
//! keystream: the seed picks the key and the substream picks the ChaCha
//! stream id, so two distinct substreams of one seed never overlap.
//! Nested work (instance → chunk, instance → permutation) derives child
//! streams with [`RandomStream::fork`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    pub seed: u64,
    pub substream: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub const fn new(seed: u64, substream: u64) -> Self {
        Self { seed, substream }
    }

    pub const fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    /// The generator for this stream, positioned at its start.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.substream);
        rng
    }

    /// Child stream `index` of this stream. Children of distinct parents or
    /// with distinct indices get distinct `(seed, substream)` pairs.
    pub fn fork(&self, index: u64) -> Self {
        let key = splitmix64(self.seed ^ splitmix64(self.substream.wrapping_mul(GOLDEN) ^ 0x5157));
        Self::new(key, index)
    }
}
