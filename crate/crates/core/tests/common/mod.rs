#![allow(dead_code)]

use std::sync::Arc;

use rampsvm::{make_synthetic, CacheConfig, Dataset, KernelCache, KernelSpec};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KAPPAS: [f64; 3] = [0.05, 0.5, 5.0];
pub const CS: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

pub struct Draw(ChaCha8Rng);

impl Draw {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn below(&mut self, k: usize) -> usize {
        (self.0.next_u64() % k as u64) as usize
    }

    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    pub fn pick<T: Copy>(&mut self, xs: &[T]) -> T {
        xs[self.below(xs.len())]
    }

    pub fn coin(&mut self) -> bool {
        self.0.next_u64() & 1 == 1
    }

    pub fn seed(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn kernel(&mut self) -> KernelSpec {
        if self.below(4) == 0 {
            KernelSpec::linear()
        } else {
            KernelSpec::gaussian(self.pick(&KAPPAS)).unwrap()
        }
    }
}

pub fn kernel(ds: &Dataset, spec: KernelSpec) -> Arc<KernelCache> {
    Arc::new(KernelCache::new(spec, Arc::new(ds.clone()), CacheConfig::default()).unwrap())
}

/// Two Gaussian clusters with label noise; separation 2 unless given.
pub fn noisy(n: usize, flip: f64, seed: u64) -> Dataset {
    make_synthetic(n, flip, 2.0, seed).unwrap()
}

/// Model coefficients spread over all training samples.
pub fn dense_alpha(model: &rampsvm::Model, n: usize) -> Vec<f64> {
    let mut a = vec![0.0; n];
    for (&i, &v) in model.support.iter().zip(&model.alpha) {
        a[i] = v;
    }
    a
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
