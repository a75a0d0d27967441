//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by `(seed, stream path, index)`
//! rather than by position in a shared sequential generator. Sample `h` of a
//! batch always sees the same numbers no matter how the batch is split across
//! workers, which is what makes training runs reproducible independent of the
//! thread count.
//!
//! The mixing function is the SplitMix64 finalizer; a [`SampleRng`] walks the
//! Weyl sequence `key + k·γ` through it, so it is itself counter based.

use rand::RngCore;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn combine(key: u64, word: u64) -> u64 {
    mix64(key ^ mix64(word.wrapping_add(GOLDEN_GAMMA)).rotate_left(17))
}

/// Well-known stream tags. Callers are free to add their own; these exist so the
/// learner, the evaluator and the tests agree on where draws come from.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const PRETRAIN: u64 = 2;
    pub const TRAIN_VALUATIONS: u64 = 3;
    pub const ES_NOISE: u64 = 4;
    pub const EVAL_PRIMARY: u64 = 5;
    pub const EVAL_SECONDARY: u64 = 6;
    pub const MONOTONICITY: u64 = 7;
}

/// Seed plus a derived stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngState {
    pub seed: u64,
    key: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            key: mix64(seed ^ 0x6a09_e667_f3bc_c909),
        }
    }

    /// Child stream identified by `tag`. Streams with different tag paths are
    /// statistically independent.
    pub fn substream(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            key: combine(self.key, tag),
        }
    }

    /// Shorthand for a chain of [`substream`](Self::substream) calls.
    pub fn path(&self, tags: &[u64]) -> Self {
        tags.iter().fold(*self, |s, &t| s.substream(t))
    }

    /// Generator for the `index`-th item of a batch drawn from this stream.
    pub fn sample_rng(&self, index: u64) -> SampleRng {
        SampleRng {
            key: combine(self.key ^ 0x3c6e_f372_fe94_f82b, index),
            counter: 0,
        }
    }
}

/// Sequential generator for a single batch item.
#[derive(Debug, Clone)]
pub struct SampleRng {
    key: u64,
    counter: u64,
}

impl SampleRng {
    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for SampleRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
