//! Moving dual variables while keeping `sum(a) = 0`: fixing a variable at a
//! bound with compensation on other variables, and repairing an
//! equality-infeasible warm start.

use super::problem::{Bound, CilProblem};
use super::state::{FixReason, Rule, SampleStatus, SolverState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixOutcome {
    Fixed,
    /// Not enough room on the partners to absorb the move; state unchanged.
    Deferred,
}

/// Sets `a_i` to `bound` and spreads the opposite change over active
/// partners, largest available slack first (ties: lowest index). Partners
/// flagged in `avoid` are used only after all others. The gradient is updated
/// on the active set with the rows of every variable that moved, then `i`
/// leaves the active set with `reason`.
pub(crate) fn fix_with_reason(
    st: &mut SolverState,
    pr: &CilProblem,
    i: usize,
    reason: FixReason,
    avoid: Option<&[bool]>,
) -> Result<FixOutcome> {
    if !st.is_active(i) {
        return Err(Error::InvalidArgument(format!("sample {i} is not active")));
    }
    let target = pr.bound_value(i, reason.bound());
    let delta = target - st.alpha[i];
    let mut moves: Vec<(usize, f64)> = Vec::new();
    if delta != 0.0 {
        // partners move by -delta in total
        let decrease = delta > 0.0;
        let slack = |k: usize| {
            if decrease {
                st.alpha[k] - pr.lower()[k]
            } else {
                pr.upper()[k] - st.alpha[k]
            }
        };
        let mut candidates: Vec<(bool, f64, usize)> = st
            .active()
            .iter()
            .copied()
            .filter(|&k| k != i)
            .map(|k| (avoid.is_some_and(|a| a[k]), slack(k), k))
            .filter(|&(_, s, _)| s > 0.0)
            .collect();
        let capacity: f64 = candidates.iter().map(|c| c.1).sum();
        if capacity < delta.abs() {
            st.counters.deferred_fixes += 1;
            return Ok(FixOutcome::Deferred);
        }
        candidates.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
        let mut remaining = delta.abs();
        for (_, s, k) in candidates {
            if remaining <= 0.0 {
                break;
            }
            let take = s.min(remaining);
            remaining -= take;
            let new = match (decrease, take == s) {
                (true, true) => pr.lower()[k],
                (false, true) => pr.upper()[k],
                (true, false) => st.alpha[k] - take,
                (false, false) => st.alpha[k] + take,
            };
            moves.push((k, new - st.alpha[k]));
            st.alpha[k] = new;
        }
        moves.push((i, delta));
        st.alpha[i] = target;
    }
    st.set_status(i, SampleStatus::Fixed(reason));
    apply_gradient_moves(st, pr, &moves, false);
    Ok(FixOutcome::Fixed)
}

/// Fixes active sample `i` at `bound` as screened by `rule`, compensating on
/// free partners.
pub fn fix_and_compensate(
    st: &mut SolverState,
    pr: &CilProblem,
    i: usize,
    bound: Bound,
    rule: Rule,
) -> Result<FixOutcome> {
    fix_with_reason(st, pr, i, FixReason::Screened { bound, rule }, None)
}

/// `g += delta_t * H_t` over the active set (or all samples).
pub(crate) fn apply_gradient_moves(st: &mut SolverState, pr: &CilProblem, moves: &[(usize, f64)], all: bool) {
    for &(t, d) in moves {
        if d == 0.0 {
            continue;
        }
        let row = pr.kernel().row_unchecked(t);
        if all {
            for (g, h) in st.grad.iter_mut().zip(row.iter()) {
                *g += d * h;
            }
        } else {
            for &k in &st.active {
                st.grad[k] += d * row[k];
            }
            if st.active.len() < st.len() {
                st.stale = true;
            }
        }
    }
}

/// Restores `sum(a) = 0` by moving the variables with the most room in the
/// needed direction first. Returns the moves applied; the gradient of every
/// sample is updated.
pub fn repair_feasibility(st: &mut SolverState, pr: &CilProblem) -> Result<Vec<(usize, f64)>> {
    let excess: f64 = st.sum_alpha();
    let tol = 1e-12 * pr.c().max(1.0) * (st.len() as f64).sqrt();
    if excess.abs() <= tol {
        return Ok(Vec::new());
    }
    let decrease = excess > 0.0;
    let mut candidates: Vec<(f64, usize)> = st
        .active()
        .iter()
        .map(|&k| {
            let s = if decrease { st.alpha[k] - pr.lower()[k] } else { pr.upper()[k] - st.alpha[k] };
            (s, k)
        })
        .filter(|&(s, _)| s > 0.0)
        .collect();
    let capacity: f64 = candidates.iter().map(|c| c.0).sum();
    if capacity < excess.abs() {
        return Err(Error::Invariant(format!("cannot restore sum(alpha) = 0: excess {excess:e}, room {capacity:e}")));
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut remaining = excess.abs();
    let mut moves = Vec::new();
    for (s, k) in candidates {
        if remaining <= 0.0 {
            break;
        }
        let take = s.min(remaining);
        remaining -= take;
        let new = match (decrease, take == s) {
            (true, true) => pr.lower()[k],
            (false, true) => pr.upper()[k],
            (true, false) => st.alpha[k] - take,
            (false, false) => st.alpha[k] + take,
        };
        moves.push((k, new - st.alpha[k]));
        st.alpha[k] = new;
    }
    apply_gradient_moves(st, pr, &moves, true);
    Ok(moves)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataio::make_synthetic;
    use crate::kernel::{CacheConfig, KernelCache, KernelSpec};
    use crate::solver::problem::build_problem;
    use crate::solver::state::exact_gradient;

    fn problem(n: usize) -> CilProblem {
        let ds = make_synthetic(n, 0.0, 2.0, 11).unwrap();
        let k = Arc::new(
            KernelCache::new(KernelSpec::gaussian(0.5).unwrap(), Arc::new(ds), CacheConfig::default()).unwrap(),
        );
        build_problem(k, 1.0, vec![0.0; n]).unwrap()
    }

    const LOW: FixReason = FixReason::Screened { bound: Bound::Lower, rule: Rule::Dynamic };
    const HIGH: FixReason = FixReason::Screened { bound: Bound::Upper, rule: Rule::Dynamic };

    #[test]
    fn already_at_bound_only_changes_status() {
        let pr = problem(4);
        let mut st = SolverState::zeros(&pr);
        let before = st.alpha.clone();
        let g_before = st.grad.clone();
        // sample 0 is +1 with box [0, 1]; a = 0 is its lower bound
        assert_eq!(fix_and_compensate(&mut st, &pr, 0, Bound::Lower, Rule::Dynamic).unwrap(), FixOutcome::Fixed);
        assert_eq!(st.alpha, before);
        assert_eq!(&st.grad[1..], &g_before[1..]);
        assert!(!st.is_active(0));
        assert_eq!(st.active(), &[1, 2, 3]);
    }

    #[test]
    fn single_partner_absorbs_offset() {
        let pr = problem(4);
        // labels alternate +1, -1: boxes [0,1], [-1,0], [0,1], [-1,0]
        let alpha = vec![0.7, -0.7, 0.0, 0.0];
        let mut st = SolverState::from_alpha(&pr, alpha).unwrap();
        st.set_status(2, SampleStatus::Fixed(LOW));
        st.set_status(3, SampleStatus::Fixed(HIGH));
        // fixing 0 at its upper bound (1.0) moves it by 0.3; sample 1 has room 0.3 downward
        let out = fix_and_compensate(&mut st, &pr, 0, Bound::Upper, Rule::Dynamic).unwrap();
        assert_eq!(out, FixOutcome::Fixed);
        assert_eq!(st.alpha[0], 1.0);
        assert!((st.alpha[1] + 1.0).abs() < 1e-15);
        assert!(st.sum_alpha().abs() < 1e-15);
        st.sync_gradient(&pr);
        let exact = exact_gradient(&pr, &st.alpha);
        for i in 0..4 {
            assert!((exact[i] - st.grad[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn defers_without_capacity() {
        let pr = problem(3);
        let mut st = SolverState::zeros(&pr);
        // raising sample 0 needs a partner that can go down; sample 2 (+1, box [0, 1])
        // is already at its lower bound and sample 1 is fixed
        st.set_status(1, SampleStatus::Fixed(HIGH));
        let out = fix_and_compensate(&mut st, &pr, 0, Bound::Upper, Rule::Dynamic).unwrap();
        assert_eq!(out, FixOutcome::Deferred);
        assert_eq!(st.alpha, vec![0.0; 3]);
        assert!(st.is_active(0));
        assert_eq!(st.counters().deferred_fixes, 1);
    }

    #[test]
    fn repair_restores_equality() {
        let pr = problem(6);
        let mut st = SolverState::from_alpha(&pr, vec![1.0, 0.0, 1.0, 0.0, 0.5, 0.0]).unwrap();
        let moves = repair_feasibility(&mut st, &pr).unwrap();
        assert!(!moves.is_empty());
        assert!(st.sum_alpha().abs() < 1e-12);
        st.check_feasible(&pr).unwrap();
        let exact = exact_gradient(&pr, &st.alpha);
        for i in 0..6 {
            assert!((exact[i] - st.grad[i]).abs() < 1e-12);
        }
    }
}
