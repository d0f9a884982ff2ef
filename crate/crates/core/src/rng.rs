//! Deterministic random streams.
//!
//! Every random draw in the crate comes from a [`SeedStream`] derived from a
//! single master seed. Streams form a tree: `stream.child(i)` is independent
//! of `stream.child(j)` for `i != j`, so work items (prior draws, MH chains,
//! scenario steps, repetitions) can run in any order, or concurrently,
//! without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    key: u64,
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        Self {
            key: splitmix(master ^ 0x5851_f42d_4c95_7f2d),
        }
    }

    pub fn child(&self, index: u64) -> Self {
        Self {
            key: splitmix(self.key ^ splitmix(index.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.key)
    }

    pub fn key(&self) -> u64 {
        self.key
    }
}

// splitmix64 finalizer
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
