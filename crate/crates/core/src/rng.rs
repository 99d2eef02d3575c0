//! Seeded, splittable random streams.
//!
//! Every random draw in the pipeline comes from a ChaCha8 stream derived from one
//! 64-bit seed plus a (label, index) pair. ChaCha is counter based, so distinct
//! stream ids give independent sequences and any stream can be recreated without
//! replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for `(label, index)`.
    pub fn rng(&self, label: &str, index: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream_id(label, index));
        rng
    }

    /// Child seed space, e.g. one per grid cell.
    pub fn child(&self, label: &str, index: u64) -> Streams {
        let id = stream_id(label, index);
        Streams::new(splitmix64(self.seed ^ splitmix64(id)))
    }
}

fn stream_id(label: &str, index: u64) -> u64 {
    // FNV-1a over the label, then mixed with the index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
