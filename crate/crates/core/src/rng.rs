//! Keyed random streams.
//!
//! A [`Stream`] is identified by a 256-bit key derived from a master seed and a
//! path of `(purpose tag, index)` pairs. Deriving a child never consumes state
//! from the parent, so any replica can be recomputed in isolation and results do
//! not depend on how work is scheduled across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Purpose tags keep sibling streams apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Tag {
    Outer = 1,
    Inner = 2,
    Replica = 3,
    Particle = 4,
    Poisson = 5,
    Resample = 6,
    Conditional = 7,
    Trial = 8,
    Validate = 9,
}

/// A reproducible random stream. Cloning the key and calling [`Stream::rng`]
/// twice yields the same sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    key: [u64; 4],
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        let a = splitmix(seed);
        let b = splitmix(a ^ 0x5851_f42d_4c95_7f2d);
        let c = splitmix(b ^ 0x1405_7b7e_f767_814f);
        let d = splitmix(c ^ 0x2545_f491_4f6c_dd1d);
        Stream { key: [a, b, c, d] }
    }

    /// Child stream for `(tag, index)`.
    pub fn derive(&self, tag: Tag, index: u64) -> Self {
        let t = splitmix(tag as u64 ^ self.key[3].rotate_left(17));
        let i = splitmix(index ^ t);
        let mut key = [0u64; 4];
        for (k, (&p, salt)) in key.iter_mut().zip(self.key.iter().zip([t, i, t ^ i, i.rotate_left(29)])) {
            *k = splitmix(p ^ salt);
        }
        Stream { key }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        for (chunk, k) in seed.chunks_exact_mut(8).zip(self.key) {
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    /// A 64-bit fingerprint, handy for logging and output metadata.
    pub fn fingerprint(&self) -> u64 {
        self.rng().next_u64()
    }
}
