use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernel::KernelCache;

/// Which end of a sample's box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Bound {
    Lower,
    Upper,
}

/// One convex inner-loop problem:
///
/// ```text
/// min_a  1/2 a'Ha - y'a   s.t.  sum(a) = 0,  lower_i <= a_i <= upper_i
/// lower_i = min(0, C y_i) - mu_i y_i,   upper_i = max(0, C y_i) - mu_i y_i
/// ```
///
/// `mu_i` is `0` or `C`; in both cases `a = 0` lies in the box.
#[derive(Debug, Clone)]
pub struct CilProblem {
    kernel: Arc<KernelCache>,
    c: f64,
    mu: Vec<f64>,
    y: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl CilProblem {
    pub fn new(kernel: Arc<KernelCache>, c: f64, mu: Vec<f64>) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("C must be positive and finite, got {c}")));
        }
        let n = kernel.len();
        if mu.len() != n {
            return Err(Error::InvalidArgument(format!("mu has {} entries for {n} samples", mu.len())));
        }
        if let Some(i) = mu.iter().position(|&m| m != 0.0 && m != c) {
            return Err(Error::InvalidArgument(format!("mu[{i}] = {} is neither 0 nor C = {c}", mu[i])));
        }
        let y = kernel.dataset().labels().to_vec();
        let lower = y.iter().zip(&mu).map(|(&yi, &m)| (c * yi).min(0.0) - m * yi).collect();
        let upper = y.iter().zip(&mu).map(|(&yi, &m)| (c * yi).max(0.0) - m * yi).collect();
        Ok(Self { kernel, c, mu, y, lower, upper })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn kernel(&self) -> &Arc<KernelCache> {
        &self.kernel
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn bound_value(&self, i: usize, bound: Bound) -> f64 {
        match bound {
            Bound::Lower => self.lower[i],
            Bound::Upper => self.upper[i],
        }
    }
}

/// Builds the inner problem for the given `mu` (each entry `0` or `C`).
pub fn build_problem(kernel: Arc<KernelCache>, c: f64, mu: Vec<f64>) -> Result<CilProblem> {
    CilProblem::new(kernel, c, mu)
}
