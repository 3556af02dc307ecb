//! Portable seeded randomness.
//!
//! Every random choice in the crate goes through [`Stream`], which wraps the
//! ChaCha8 generator from `rand_chacha` (seeded with `seed_from_u64`, stream
//! selected with `set_stream`). Only raw `next_u64` draws are consumed and the
//! mapping from draws to values is defined here, so results do not depend on
//! distribution code that may change between `rand` releases:
//!
//! - integer in `[0, k)`: `next_u64() % k`
//! - uniform in `[0, 1)`: `(next_u64() >> 11) as f64 * 2^-53`
//! - standard normal: Box–Muller, `sqrt(-2 ln(1 - u1)) * cos(2π u2)`, one
//!   value per pair of uniforms

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub(crate) struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub(crate) fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub(crate) fn below(&mut self, k: usize) -> usize {
        debug_assert!(k > 0);
        (self.rng.next_u64() % k as u64) as usize
    }

    pub(crate) fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub(crate) fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// First `m` entries of a Fisher–Yates shuffle of `0..n`.
    pub(crate) fn partial_permutation(&mut self, n: usize, m: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for k in 0..m {
            let j = k + self.below(n - k);
            idx.swap(k, j);
        }
        idx.truncate(m);
        idx
    }
}
