//! Counter-based random streams.
//!
//! Every random draw in a run is taken from a stream keyed by
//! `(master seed, particle, step, purpose)`. Streams are independent of
//! evaluation order, so results do not depend on how particles are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for; keeps e.g. switching and noise draws disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Initial = 1,
    Switching = 2,
    Noise = 3,
}

/// Factory for per-(particle, step) generators derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamFactory {
    seed: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for one particle at one step.
    pub fn stream(&self, particle: usize, step: u64, purpose: Purpose) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let words = [
            splitmix64(self.seed),
            splitmix64(particle as u64 ^ 0x5851_f42d_4c95_7f2d),
            splitmix64(step ^ 0x1405_7b7e_f767_814f),
            splitmix64(purpose as u64),
        ];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}
