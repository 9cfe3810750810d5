//! Deterministic random source for trace generation.
//!
//! The generator is xoshiro256++ seeded through SplitMix64 (the reference
//! seeding procedure). Per-thread streams are derived from the base stream by
//! repeated `long_jump`, giving 2^192-spaced non-overlapping subsequences.
//! Sampling helpers are defined here explicitly instead of through a
//! distribution library so another implementation of the same algorithm can
//! reproduce a trace bit for bit.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Identifier written into trace headers.
pub const RNG_NAME: &str = "xoshiro256pp";

#[derive(Debug, Clone)]
pub struct SimRng {
    inner: Xoshiro256PlusPlus,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Stream `index` of the family rooted at `seed`. Stream 0 is the root.
    pub fn stream(seed: u64, index: u32) -> Self {
        let mut rng = Self::new(seed);
        for _ in 0..index {
            rng.inner.long_jump();
        }
        rng
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, n)` by 128-bit multiply-shift. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }

    /// Uniform in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        match (hi - lo).checked_add(1) {
            Some(span) => lo + self.below(span),
            None => self.next_u64(),
        }
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn index(&mut self, len: usize) -> usize {
        self.below(len as u64) as usize
    }
}
