//! Safe sample screening.
//!
//! The optimal gradient `g*_i` of every sample lies within `sqrt(K_ii * gap)`
//! of its value at any feasible iterate. The optimal bias is not pinned by
//! the gap, so it is bracketed separately (see [`bias_range`]). A sample
//! whose `g_i + b` stays positive over the whole ball and bias range has its
//! optimal multiplier at the lower bound; one that stays negative, at the
//! upper bound.
//!
//! Two rules use this:
//!
//! - the dynamic rule, evaluated periodically inside one inner solve;
//! - the propagation rule, evaluated at the end of inner problem `k` for
//!   problem `k + 1`, widening the radius by how far the warm start of
//!   `k + 1` moved: `m * |H_i| + q_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::fix::{fix_with_reason, repair_feasibility, FixOutcome};
use crate::solver::gap::compute_gap_at;
use crate::solver::problem::{Bound, CilProblem};
use crate::solver::state::{FixReason, Rule, SampleStatus, SolverState};

/// When periodic checks (screening or shrinking) run inside a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub warmup: usize,
    pub cadence: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { warmup: 50, cadence: 10 }
    }
}

/// True on iteration `warmup` and every `cadence` iterations after it.
pub fn schedule(iter: usize, cfg: &Schedule) -> bool {
    iter >= cfg.warmup && (iter - cfg.warmup) % cfg.cadence.max(1) == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Kept,
    /// Optimal value is the lower bound.
    ScreenedLow,
    /// Optimal value is the upper bound.
    ScreenedHigh,
    /// Screened, but the fix could not be executed yet.
    Deferred,
}

impl Decision {
    pub fn bound(self) -> Option<Bound> {
        match self {
            Decision::ScreenedLow => Some(Bound::Lower),
            Decision::ScreenedHigh => Some(Bound::Upper),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub rule: Rule,
    pub iteration: usize,
    pub gap: f64,
    /// Bias estimate of the state the rule was applied to.
    pub bias: f64,
    /// Interval known to contain the optimal bias; may be unbounded.
    pub bias_range: (f64, f64),
    pub decisions: Vec<Decision>,
    /// Half-width of the ball around `g_i` that contains `g*_i`.
    pub radii: Vec<f64>,
    pub screened_fraction: f64,
}

impl ScreeningReport {
    pub fn count(&self, d: Decision) -> usize {
        self.decisions.iter().filter(|&&x| x == d).count()
    }

    fn refresh_fraction(&mut self) {
        let screened = self.decisions.iter().filter(|d| d.bound().is_some()).count();
        self.screened_fraction = screened as f64 / self.decisions.len().max(1) as f64;
    }
}

pub(crate) fn gap_tolerance(pr: &CilProblem) -> f64 {
    1e-10 * pr.c().max(1.0)
}

fn existing_decision(status: SampleStatus) -> Decision {
    match status {
        SampleStatus::Fixed(FixReason::Screened { bound: Bound::Lower, .. }) => Decision::ScreenedLow,
        SampleStatus::Fixed(FixReason::Screened { bound: Bound::Upper, .. }) => Decision::ScreenedHigh,
        _ => Decision::Kept,
    }
}

fn decide(d: f64, r: f64, (lo, hi): (f64, f64)) -> Option<Bound> {
    if d - r + lo > 0.0 {
        Some(Bound::Lower)
    } else if d + r + hi < 0.0 {
        Some(Bound::Upper)
    } else {
        None
    }
}

/// Largest `v` with `sum(w : key >= v) > need`, or `None` if the total weight
/// never exceeds `need`. Reorders `items`.
fn weighted_top(mut items: &mut [(f64, f64)], mut need: f64) -> Option<f64> {
    loop {
        if items.len() <= 16 {
            items.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
            let mut acc = 0.0;
            for &(key, w) in items.iter() {
                acc += w;
                if acc > need {
                    return Some(key);
                }
            }
            return None;
        }
        let mid = items.len() / 2;
        items.select_nth_unstable_by(mid, |a, b| b.0.total_cmp(&a.0));
        let top: f64 = items[..mid].iter().map(|x| x.1).sum();
        if top > need {
            items = &mut items[..mid];
        } else {
            need -= top;
            items = &mut items[mid..];
        }
    }
}

/// Interval containing every optimal bias of `pr`, given that `g*_i` lies in
/// `[center_i - radius_i, center_i + radius_i]` for `i` in `idx`.
///
/// At the optimum `b >= -g*_j` for every `j` below its upper bound and
/// `b <= -g*_j` for every `j` above its lower bound. The multipliers of `idx`
/// must sum to `target`; samples outside `idx` whose value is not known
/// contribute only their box (`outside_lo`, `outside_up` are its sums). If the
/// `k` samples with the largest `-g_j - r_j` cannot all sit at their upper
/// bounds without breaking the sum, one of them is below it, which bounds `b`
/// from below; symmetrically from above.
pub fn bias_range(
    pr: &CilProblem,
    idx: &[usize],
    center: &[f64],
    radius: impl Fn(usize) -> f64,
    target: f64,
    outside: (f64, f64),
) -> (f64, f64) {
    let (lower, upper) = (pr.lower(), pr.upper());
    let tol = gap_tolerance(pr);
    let (mut sum_lo, mut sum_up) = outside;
    let mut items = Vec::with_capacity(idx.len());
    for &i in idx {
        sum_lo += lower[i];
        sum_up += upper[i];
        items.push((-center[i] - radius(i), upper[i] - lower[i]));
    }
    let lo = weighted_top(&mut items, target - sum_lo + tol).unwrap_or(f64::NEG_INFINITY);
    for (x, &i) in items.iter_mut().zip(idx) {
        *x = (center[i] - radius(i), upper[i] - lower[i]);
    }
    let hi = weighted_top(&mut items, sum_up - target + tol).map_or(f64::INFINITY, |v| -v);
    (lo, hi)
}

/// Bias range for the dynamic rule: screened samples sit at their (correct)
/// bounds, shrunk ones anywhere in their box.
fn dynamic_bias_range(st: &SolverState, pr: &CilProblem, radii: &[f64]) -> (f64, f64) {
    let (mut target, mut outside) = (0.0, (0.0, 0.0));
    if st.shrunk == 0 {
        // the fixed multipliers sum to minus the active ones
        target = st.active.iter().map(|&i| st.alpha[i]).sum();
    } else {
        for (i, s) in st.status.iter().enumerate() {
            match s {
                SampleStatus::Active => {}
                SampleStatus::Fixed(FixReason::Screened { .. }) => target -= st.alpha[i],
                SampleStatus::Fixed(FixReason::Shrunk { .. }) => {
                    outside.0 += pr.lower()[i];
                    outside.1 += pr.upper()[i];
                }
            }
        }
    }
    bias_range(pr, st.active(), &st.grad, |i| radii[i], target, outside)
}

fn check_gap(pr: &CilProblem, gap: f64) -> Result<f64> {
    if gap < -gap_tolerance(pr) || gap.is_nan() {
        return Err(Error::Invariant(format!("negative duality gap {gap:e}")));
    }
    Ok(gap.max(0.0))
}

/// Applies the dynamic rule at the current state without changing it.
/// `gap` must be a valid duality gap of the state; `bias` is only recorded.
pub fn evaluate_dynamic(st: &SolverState, pr: &CilProblem, bias: f64, gap: f64) -> Result<ScreeningReport> {
    let gap = check_gap(pr, gap)?;
    let diag = pr.kernel().diag();
    let radii: Vec<f64> = diag.iter().map(|&k| (k * gap).sqrt()).collect();
    let range = dynamic_bias_range(st, pr, &radii);
    let mut decisions: Vec<Decision> = st.status().iter().map(|&s| existing_decision(s)).collect();
    for &i in st.active() {
        decisions[i] = match decide(st.grad[i], radii[i], range) {
            Some(Bound::Lower) => Decision::ScreenedLow,
            Some(Bound::Upper) => Decision::ScreenedHigh,
            None => Decision::Kept,
        };
    }
    let mut report = ScreeningReport {
        rule: Rule::Dynamic,
        iteration: st.iterations(),
        gap,
        bias,
        bias_range: range,
        decisions,
        radii,
        screened_fraction: 0.0,
    };
    report.refresh_fraction();
    Ok(report)
}

/// Active samples the dynamic rule screens at `gap`.
pub(crate) fn screen_active(st: &SolverState, pr: &CilProblem, gap: f64) -> Result<Vec<(usize, Bound)>> {
    let gap = check_gap(pr, gap)?;
    let diag = pr.kernel().diag();
    // radii are only read on the active set
    let mut radii = vec![0.0; st.len()];
    for &i in st.active() {
        radii[i] = (diag[i] * gap).sqrt();
    }
    let range = dynamic_bias_range(st, pr, &radii);
    Ok(st.active().iter().filter_map(|&i| decide(st.grad[i], radii[i], range).map(|b| (i, b))).collect())
}

/// Fixes the given active samples as screened by `rule`; returns the ones
/// whose fix had to be deferred for lack of partner capacity.
pub(crate) fn execute_fixes(
    st: &mut SolverState,
    pr: &CilProblem,
    newly: &[(usize, Bound)],
    rule: Rule,
) -> Result<Vec<usize>> {
    let mut deferred = Vec::new();
    if newly.is_empty() {
        return Ok(deferred);
    }
    let mut avoid = vec![false; st.len()];
    for &(i, _) in newly {
        avoid[i] = true;
    }
    for &(i, bound) in newly {
        let reason = FixReason::Screened { bound, rule };
        if fix_with_reason(st, pr, i, reason, Some(&avoid))? == FixOutcome::Deferred {
            deferred.push(i);
        }
    }
    Ok(deferred)
}

/// Fixes every newly screened active sample. Samples whose fix has to wait
/// for partner capacity are marked [`Decision::Deferred`].
pub(crate) fn execute(st: &mut SolverState, pr: &CilProblem, report: &mut ScreeningReport) -> Result<()> {
    let newly: Vec<(usize, Bound)> =
        st.active().iter().filter_map(|&i| report.decisions[i].bound().map(|b| (i, b))).collect();
    for i in execute_fixes(st, pr, &newly, report.rule)? {
        report.decisions[i] = Decision::Deferred;
    }
    report.refresh_fraction();
    Ok(())
}

/// Dynamic rule at the current state (using its stored bias), executing the
/// resulting fixes.
pub fn dynamic_screen(st: &mut SolverState, pr: &CilProblem, gap: f64) -> Result<ScreeningReport> {
    let mut report = evaluate_dynamic(st, pr, st.bias, gap)?;
    execute(st, pr, &mut report)?;
    Ok(report)
}

/// How far the warm start of the next inner problem can be from the
/// converged state of the current one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationBounds {
    /// `|a^{k+1,0} - a^k|` from the `mu` changes alone (`C sqrt(|changed|)`).
    pub m: f64,
    /// Norm of the extra moves made to restore `sum(a) = 0`.
    pub m_repair: f64,
    /// `sqrt(K_ii |G(warm) - G(prev)|)` per sample.
    pub q: Vec<f64>,
    /// Samples whose `mu` changed.
    pub changed: Vec<usize>,
    pub prev_gap: f64,
    pub warm_gap: f64,
}

/// Builds the warm start for the next inner problem from the converged state
/// `prev` of `prev_pr`: every multiplier `beta_i` is kept, so
/// `a_i += y_i (mu_i - mu'_i)`, the bias is carried over, and `sum(a) = 0` is
/// then restored. Returns the movement bounds and the warm state.
pub fn compute_propagation_bounds(
    prev: &SolverState,
    prev_pr: &CilProblem,
    next_pr: &CilProblem,
) -> Result<(PropagationBounds, SolverState)> {
    if prev.len() != next_pr.len() || prev_pr.len() != next_pr.len() {
        return Err(Error::InvalidArgument("problems have different sizes".into()));
    }
    if prev.stale {
        return Err(Error::Invariant("previous state has a stale gradient".into()));
    }
    let prev_gap = compute_gap_at(prev, prev_pr, prev.bias)?;
    let mut warm = SolverState::from_parts(prev.alpha.clone(), prev.grad.clone());
    warm.bias = prev.bias;
    let y = next_pr.y();
    let changed: Vec<usize> = (0..prev.len()).filter(|&i| prev_pr.mu()[i] != next_pr.mu()[i]).collect();
    let mut flip_moves = Vec::with_capacity(changed.len());
    for &i in &changed {
        let d = y[i] * (prev_pr.mu()[i] - next_pr.mu()[i]);
        let a = (warm.alpha[i] + d).clamp(next_pr.lower()[i], next_pr.upper()[i]);
        flip_moves.push((i, a - warm.alpha[i]));
        warm.alpha[i] = a;
    }
    crate::solver::fix::apply_gradient_moves(&mut warm, next_pr, &flip_moves, true);
    let repair_moves = repair_feasibility(&mut warm, next_pr)?;
    let norm = |moves: &[(usize, f64)]| moves.iter().map(|(_, d)| d * d).sum::<f64>().sqrt();
    let warm_gap = compute_gap_at(&warm, next_pr, warm.bias)?;
    let diff = (warm_gap - prev_gap).abs();
    let q = next_pr.kernel().diag().iter().map(|&k| (k * diff).sqrt()).collect();
    let bounds =
        PropagationBounds { m: norm(&flip_moves), m_repair: norm(&repair_moves), q, changed, prev_gap, warm_gap };
    Ok((bounds, warm))
}

/// Propagation rule: which samples are provably at a bound in the optimum of
/// `next_pr`, judged from the converged state `prev` of the previous problem.
/// Decisions refer to the bounds of `next_pr`.
pub fn propagate_screen(
    prev: &SolverState,
    next_pr: &CilProblem,
    bounds: &PropagationBounds,
    row_norms: Option<&[f64]>,
) -> Result<ScreeningReport> {
    let row_norms = row_norms.ok_or(Error::MissingRowNorms)?;
    if row_norms.len() != next_pr.len() {
        return Err(Error::MissingRowNorms);
    }
    if prev.stale {
        return Err(Error::Invariant("previous state has a stale gradient".into()));
    }
    let gap = check_gap(next_pr, bounds.prev_gap)?;
    let shift = bounds.m + bounds.m_repair;
    let diag = next_pr.kernel().diag();
    let radii: Vec<f64> =
        (0..prev.len()).map(|i| (diag[i] * gap).sqrt() + shift * row_norms[i] + bounds.q[i]).collect();
    let all: Vec<usize> = (0..prev.len()).collect();
    let range = bias_range(next_pr, &all, &prev.grad, |i| radii[i], 0.0, (0.0, 0.0));
    let decisions = (0..prev.len())
        .map(|i| match decide(prev.grad[i], radii[i], range) {
            Some(Bound::Lower) => Decision::ScreenedLow,
            Some(Bound::Upper) => Decision::ScreenedHigh,
            None => Decision::Kept,
        })
        .collect();
    let mut report = ScreeningReport {
        rule: Rule::Propagation,
        iteration: 0,
        gap,
        bias: prev.bias,
        bias_range: range,
        decisions,
        radii,
        screened_fraction: 0.0,
    };
    report.refresh_fraction();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataio::make_synthetic;
    use crate::kernel::{CacheConfig, KernelCache, KernelSpec};
    use crate::oracle::solve_cil_reference;
    use crate::solver::gap::estimate_bias;
    use crate::solver::problem::build_problem;
    use crate::solver::{solve, SolverConfig};

    fn kernel(n: usize, flip: f64, seed: u64) -> Arc<KernelCache> {
        let ds = make_synthetic(n, flip, 2.0, seed).unwrap();
        Arc::new(KernelCache::new(KernelSpec::gaussian(0.5).unwrap(), Arc::new(ds), CacheConfig::default()).unwrap())
    }

    fn converged(pr: &CilProblem) -> SolverState {
        solve(pr, None, &SolverConfig { eps: 1e-12, ..Default::default() }).unwrap()
    }

    #[test]
    fn zero_gap_screens_by_sign() {
        let pr = build_problem(kernel(30, 0.1, 1), 1.0, vec![0.0; 30]).unwrap();
        let st = converged(&pr);
        let report = evaluate_dynamic(&st, &pr, st.bias, 0.0).unwrap();
        let (lo, hi) = report.bias_range;
        assert!(lo <= hi && hi - lo < 1e-6, "{lo} {hi}");
        for i in 0..30 {
            let g = st.grad()[i];
            let expected = if g + lo > 0.0 {
                Decision::ScreenedLow
            } else if g + hi < 0.0 {
                Decision::ScreenedHigh
            } else {
                Decision::Kept
            };
            assert_eq!(report.decisions[i], expected);
            assert_eq!(report.radii[i], 0.0);
        }
    }

    #[test]
    fn huge_gap_keeps_everything() {
        let pr = build_problem(kernel(30, 0.1, 1), 1.0, vec![0.0; 30]).unwrap();
        let st = SolverState::zeros(&pr);
        let report = evaluate_dynamic(&st, &pr, 0.0, 1e6).unwrap();
        assert_eq!(report.count(Decision::Kept), 30);
        assert_eq!(report.screened_fraction, 0.0);
    }

    #[test]
    fn negative_gap_is_an_error() {
        let pr = build_problem(kernel(10, 0.0, 1), 1.0, vec![0.0; 10]).unwrap();
        let st = SolverState::zeros(&pr);
        assert!(evaluate_dynamic(&st, &pr, 0.0, -1e-6).is_err());
        assert!(evaluate_dynamic(&st, &pr, 0.0, -1e-12).is_ok());
    }

    #[test]
    fn radius_is_exact() {
        let pr = build_problem(kernel(10, 0.0, 1), 1.0, vec![0.0; 10]).unwrap();
        let st = SolverState::zeros(&pr);
        let report = evaluate_dynamic(&st, &pr, 0.0, 0.37).unwrap();
        for (r, &k) in report.radii.iter().zip(pr.kernel().diag()) {
            assert_eq!(*r, (k * 0.37).sqrt());
        }
    }

    #[test]
    fn dynamic_decisions_match_reference_optimum() {
        let pr = build_problem(kernel(50, 0.05, 8), 1.0, vec![0.0; 50]).unwrap();
        let (alpha_ref, _) = solve_cil_reference(&pr, 1e-10).unwrap();
        let mut st = SolverState::zeros(&pr);
        let cfg = SolverConfig { eps: 1e-3, ..Default::default() };
        st = solve(&pr, Some(st), &cfg).unwrap();
        let b = estimate_bias(&st, &pr).value;
        let gap = crate::solver::gap::compute_gap_at(&st, &pr, b).unwrap();
        let report = evaluate_dynamic(&st, &pr, b, gap).unwrap();
        assert!(report.screened_fraction > 0.0);
        for i in 0..50 {
            if let Some(bound) = report.decisions[i].bound() {
                assert!((alpha_ref[i] - pr.bound_value(i, bound)).abs() < 1e-6, "sample {i}");
            }
        }
    }

    fn flipped(pr: &CilProblem, flips: &[usize]) -> CilProblem {
        let mut mu = pr.mu().to_vec();
        for &i in flips {
            mu[i] = if mu[i] == 0.0 { pr.c() } else { 0.0 };
        }
        build_problem(Arc::clone(pr.kernel()), pr.c(), mu).unwrap()
    }

    #[test]
    fn unchanged_mu_reduces_to_dynamic_rule() {
        let pr = build_problem(kernel(40, 0.1, 2), 1.0, vec![0.0; 40]).unwrap();
        let st = converged(&pr);
        let next = flipped(&pr, &[]);
        let (bounds, warm) = compute_propagation_bounds(&st, &pr, &next).unwrap();
        assert_eq!((bounds.m, bounds.m_repair), (0.0, 0.0));
        assert!(bounds.q.iter().all(|&q| q == 0.0));
        assert_eq!(warm.alpha(), st.alpha());
        let prop = propagate_screen(&st, &next, &bounds, Some(pr.kernel().row_norms())).unwrap();
        let dynamic = evaluate_dynamic(&st, &pr, st.bias, bounds.prev_gap).unwrap();
        assert_eq!(prop.decisions, dynamic.decisions);
        assert_eq!(prop.radii, dynamic.radii);
    }

    #[test]
    fn single_flip_moves_by_c() {
        let pr = build_problem(kernel(20, 0.0, 3), 1.0, vec![0.0; 20]).unwrap();
        let st = converged(&pr);
        let i = (0..20).find(|&i| pr.y()[i] > 0.0).unwrap();
        let next = flipped(&pr, &[i]);
        let (bounds, warm) = compute_propagation_bounds(&st, &pr, &next).unwrap();
        assert_eq!(bounds.m, 1.0);
        assert_eq!(bounds.changed, vec![i]);
        warm.check_feasible(&next).unwrap();
    }

    #[test]
    fn three_flips_and_exact_warm_gap() {
        let pr = build_problem(kernel(40, 0.1, 4), 1.0, vec![0.0; 40]).unwrap();
        let st = converged(&pr);
        let next = flipped(&pr, &[3, 10, 17]);
        let (bounds, warm) = compute_propagation_bounds(&st, &pr, &next).unwrap();
        assert!((bounds.m - 3f64.sqrt()).abs() < 1e-15);
        let fresh = SolverState::from_alpha(&next, warm.alpha().to_vec()).unwrap();
        let recomputed = crate::solver::gap::compute_gap_at(&fresh, &next, warm.bias).unwrap();
        assert!((recomputed - bounds.warm_gap).abs() < 1e-10);
    }

    #[test]
    fn propagation_requires_row_norms() {
        let pr = build_problem(kernel(10, 0.0, 5), 1.0, vec![0.0; 10]).unwrap();
        let st = converged(&pr);
        let (bounds, _) = compute_propagation_bounds(&st, &pr, &pr).unwrap();
        assert!(matches!(propagate_screen(&st, &pr, &bounds, None), Err(Error::MissingRowNorms)));
    }

    #[test]
    fn propagated_decisions_match_reference_of_next_problem() {
        let pr = build_problem(kernel(50, 0.1, 6), 1.0, vec![0.0; 50]).unwrap();
        let st = converged(&pr);
        let mu = crate::cccp::compute_mu(&st, &pr, 0.0);
        let next = build_problem(Arc::clone(pr.kernel()), 1.0, mu).unwrap();
        let (bounds, _) = compute_propagation_bounds(&st, &pr, &next).unwrap();
        let report = propagate_screen(&st, &next, &bounds, Some(pr.kernel().row_norms())).unwrap();
        let (alpha_ref, _) = solve_cil_reference(&next, 1e-10).unwrap();
        for i in 0..50 {
            if let Some(bound) = report.decisions[i].bound() {
                assert!((alpha_ref[i] - next.bound_value(i, bound)).abs() < 1e-6, "sample {i}");
            }
        }
    }

    #[test]
    fn schedule_matches_defaults() {
        let cfg = Schedule::default();
        assert!(!schedule(49, &cfg));
        assert!(schedule(50, &cfg));
        assert!(!schedule(65, &cfg));
        assert!(schedule(70, &cfg));
        assert!(!schedule(0, &cfg));
    }

    #[test]
    fn zero_cadence_means_every_iteration() {
        let cfg = Schedule { warmup: 0, cadence: 0 };
        assert!((0..20).all(|i| schedule(i, &cfg)));
    }
}
