//! Bias estimation and duality gap, both evaluated from the maintained
//! gradient so no kernel values are recomputed.
//!
//! With `f_i = g_i + y_i + b` the primal and dual values of an inner problem are
//!
//! ```text
//! P = 1/2 |w|^2 + C sum H1(y_i f_i) + sum mu_i y_i f_i
//! D = -1/2 |w|^2 + sum y_i a_i + sum mu_i,      |w|^2 = sum (g_i + y_i) a_i
//! ```
//!
//! When `sum(a) = 0` the gap splits into nonnegative per-sample terms
//! `t_i = C H1(z_i) - beta_i (1 - z_i)`, `z_i = y_i f_i`, where
//! `beta_i = y_i a_i + mu_i` is the hinge multiplier. A sample fixed at a
//! bound contributes nothing to the gap of the reduced problem, so the gap of
//! the active set is just the sum of the active terms.

use super::problem::CilProblem;
use super::state::SolverState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasSource {
    /// Mean over free variables.
    FreeMean,
    /// Midpoint of the KKT-consistent interval.
    Midpoint,
    /// No candidates at all; returned 0.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasEstimate {
    pub value: f64,
    pub source: BiasSource,
}

pub fn hinge(z: f64) -> f64 {
    (1.0 - z).max(0.0)
}

/// Bias from the active set: the mean of `-g_i` over free variables when any
/// exist, otherwise the midpoint of `[-min_{a<upper} g, -max_{a>lower} g]`.
pub fn estimate_bias(st: &SolverState, pr: &CilProblem) -> BiasEstimate {
    estimate_bias_over(st, pr, st.active())
}

/// [`estimate_bias`] restricted to the given samples.
pub fn estimate_bias_over(st: &SolverState, pr: &CilProblem, indices: &[usize]) -> BiasEstimate {
    let (lo, up) = (pr.lower(), pr.upper());
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut min_up = f64::INFINITY;
    let mut max_low = f64::NEG_INFINITY;
    for &i in indices {
        let (a, g) = (st.alpha[i], st.grad[i]);
        let below_upper = a < up[i];
        let above_lower = a > lo[i];
        if below_upper && above_lower {
            free_sum -= g;
            free_count += 1;
        }
        if below_upper {
            min_up = min_up.min(g);
        }
        if above_lower {
            max_low = max_low.max(g);
        }
    }
    if free_count > 0 {
        return BiasEstimate { value: free_sum / free_count as f64, source: BiasSource::FreeMean };
    }
    match (min_up.is_finite(), max_low.is_finite()) {
        (true, true) => BiasEstimate { value: -(min_up + max_low) / 2.0, source: BiasSource::Midpoint },
        (true, false) => BiasEstimate { value: -min_up, source: BiasSource::Midpoint },
        (false, true) => BiasEstimate { value: -max_low, source: BiasSource::Midpoint },
        (false, false) => BiasEstimate { value: 0.0, source: BiasSource::Fallback },
    }
}

/// Gap contribution of one sample, `C H1(z) - beta (1 - z)` with
/// `z = y_i f_i`, written so that it is nonnegative in floating point and
/// exactly zero for a variable at a bound on the correct side.
pub(crate) fn gap_term(pr: &CilProblem, i: usize, alpha: f64, grad: f64, b: f64) -> f64 {
    let y = pr.y()[i];
    let c = pr.c();
    let z = y * (grad + y + b);
    let beta = (y * alpha + pr.mu()[i]).clamp(0.0, c);
    if z < 1.0 {
        (c - beta) * (1.0 - z)
    } else {
        beta * (z - 1.0)
    }
}

/// Gap of the problem restricted to the active set (fixed variables folded
/// into the linear term). Needs only active gradients.
pub fn active_gap(st: &SolverState, pr: &CilProblem, b: f64) -> f64 {
    st.active().iter().map(|&i| gap_term(pr, i, st.alpha[i], st.grad[i], b)).sum()
}

/// Full primal and dual values at `(a, b)`.
pub fn primal_dual(st: &SolverState, pr: &CilProblem, b: f64) -> (f64, f64) {
    let g = st.grad();
    let c = pr.c();
    let mut w2 = 0.0;
    let mut loss = 0.0;
    let mut ya = 0.0;
    let mut mu_sum = 0.0;
    for i in 0..st.len() {
        let (y, mu, a) = (pr.y()[i], pr.mu()[i], st.alpha[i]);
        w2 += (g[i] + y) * a;
        let z = y * (g[i] + y + b);
        loss += c * hinge(z) + mu * z;
        ya += y * a;
        mu_sum += mu;
    }
    (0.5 * w2 + loss, -0.5 * w2 + ya + mu_sum)
}

/// `P - D` at the given bias, summed from the per-sample terms (equal to the
/// difference of [`primal_dual`] whenever `sum(a) = 0`). Requires a
/// synchronized gradient.
pub fn compute_gap_at(st: &SolverState, pr: &CilProblem, b: f64) -> Result<f64> {
    if st.stale {
        return Err(Error::Invariant("gap requested with a stale gradient".into()));
    }
    let gap: f64 = (0..st.len()).map(|i| gap_term(pr, i, st.alpha[i], st.grad[i], b)).sum();
    if gap.is_nan() {
        return Err(Error::Numerical("duality gap is NaN".into()));
    }
    Ok(gap)
}

/// `P - D` with the bias from [`estimate_bias`].
pub fn compute_gap(st: &SolverState, pr: &CilProblem) -> Result<f64> {
    compute_gap_at(st, pr, estimate_bias(st, pr).value)
}

/// `1/2 a'Ha - y'a` from the maintained gradient.
pub fn dual_objective(st: &SolverState, pr: &CilProblem) -> f64 {
    let g = st.grad();
    st.alpha.iter().zip(g).zip(pr.y()).map(|((&a, &g), &y)| 0.5 * a * (g - y)).sum()
}

/// Decision values `f_i = g_i + y_i + b` on the training samples.
pub fn decision_values(st: &SolverState, pr: &CilProblem) -> Vec<f64> {
    st.grad().iter().zip(pr.y()).map(|(&g, &y)| g + y + st.bias).collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataio::{make_synthetic, Dataset};
    use crate::kernel::{CacheConfig, KernelCache, KernelSpec};
    use crate::solver::problem::build_problem;

    fn problem(ds: Dataset, spec: KernelSpec, c: f64, mu_on: &[usize]) -> CilProblem {
        let n = ds.len();
        let k = Arc::new(KernelCache::new(spec, Arc::new(ds), CacheConfig::default()).unwrap());
        let mut mu = vec![0.0; n];
        for &i in mu_on {
            mu[i] = c;
        }
        build_problem(k, c, mu).unwrap()
    }

    #[test]
    fn gap_at_zero_is_hinge_sum() {
        let ds = make_synthetic(9, 0.0, 2.0, 3).unwrap();
        let labels = ds.labels().to_vec();
        let pr = problem(ds, KernelSpec::gaussian(0.5).unwrap(), 2.0, &[]);
        let st = SolverState::zeros(&pr);
        let pos = labels.iter().filter(|&&y| y > 0.0).count();
        let b: f64 = if 2 * pos >= labels.len() { 1.0 } else { -1.0 };
        let expected: f64 = labels.iter().map(|&y| 2.0 * hinge(y * b)).sum();
        let gap = compute_gap_at(&st, &pr, b).unwrap();
        assert_eq!(gap, expected);
        assert!(gap >= 0.0);
    }

    #[test]
    fn per_sample_terms_sum_to_gap() {
        let ds = make_synthetic(20, 0.1, 2.0, 5).unwrap();
        let pr = problem(ds, KernelSpec::gaussian(0.5).unwrap(), 1.0, &[1, 4, 7]);
        // box midpoints, then restore sum(a) = 0
        let alpha = (0..20).map(|i| 0.5 * (pr.lower()[i] + pr.upper()[i])).collect();
        let mut st = SolverState::from_alpha(&pr, alpha).unwrap();
        crate::solver::fix::repair_feasibility(&mut st, &pr).unwrap();
        st.check_feasible(&pr).unwrap();
        for b in [-0.7, 0.0, 0.3] {
            let (p, d) = primal_dual(&st, &pr, b);
            let direct = p - d;
            let terms = compute_gap_at(&st, &pr, b).unwrap();
            assert!((direct - terms).abs() < 1e-10, "{direct} vs {terms}");
            assert!((0..20).all(|i| gap_term(&pr, i, st.alpha[i], st.grad[i], b) >= -1e-12));
            assert!((active_gap(&st, &pr, b) - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn bias_from_free_variables() {
        let ds = Dataset::new(vec![vec![(1, 1.0)]; 3], vec![1.0, -1.0, 1.0]).unwrap();
        let pr = problem(ds, KernelSpec::linear(), 1.0, &[]);
        let st = SolverState::from_parts(vec![0.3, -0.5, 0.2], vec![0.25, 0.25, 0.25]);
        let est = estimate_bias(&st, &pr);
        assert_eq!(est.source, BiasSource::FreeMean);
        assert_eq!(est.value, -0.25);
    }

    #[test]
    fn bias_midpoint_without_free_variables() {
        // sample 0 at its lower bound (only below upper), sample 1 at upper (only above lower)
        let ds = Dataset::new(vec![vec![(1, 1.0)]; 2], vec![1.0, 1.0]).unwrap();
        let pr = problem(ds, KernelSpec::linear(), 1.0, &[]);
        let st = SolverState::from_parts(vec![0.0, 1.0], vec![0.4, -0.6]);
        let est = estimate_bias(&st, &pr);
        assert_eq!(est.source, BiasSource::Midpoint);
        assert!((est.value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn bias_fallback_when_nothing_active() {
        let ds = Dataset::new(vec![vec![(1, 1.0)]], vec![1.0]).unwrap();
        let pr = problem(ds, KernelSpec::linear(), 1.0, &[]);
        let mut st = SolverState::zeros(&pr);
        st.active.clear();
        let est = estimate_bias(&st, &pr);
        assert_eq!(est, BiasEstimate { value: 0.0, source: BiasSource::Fallback });
    }
}
