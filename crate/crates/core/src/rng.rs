//! Deterministic random streams.
//!
//! Every stochastic operation takes an explicit [`SeedRng`]. Independent
//! consumers (permutation sampling, dropout masks, subset draws, failure
//! draws) use separate named streams derived from one seed, so adding draws
//! to one consumer never shifts the values seen by another.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named stream identifiers.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const ORDER: u64 = 5;
    pub const SUBSET: u64 = 6;
    pub const FAILURE: u64 = 7;
    pub const BATCHES: u64 = 8;
    pub const LAYERDROP: u64 = 9;
    pub const SAMPLES: u64 = 10;
}

#[derive(Clone, Debug)]
pub struct SeedRng(ChaCha8Rng);

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        SeedRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Stream `id` of `seed`; streams of one seed are independent.
    pub fn stream(seed: u64, id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(id);
        SeedRng(inner)
    }

    /// Child generator seeded from this one.
    pub fn split(&mut self) -> Self {
        SeedRng(ChaCha8Rng::seed_from_u64(self.0.random()))
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.random()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }
}

impl RngCore for SeedRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
