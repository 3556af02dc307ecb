//! SMO solver for one convex inner-loop (CIL) problem.

pub mod fix;
pub mod gap;
pub mod problem;
pub mod shrink;
pub mod smo;
pub mod state;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::screening::{self, Schedule, ScreeningReport};
use fix::{fix_with_reason, repair_feasibility};
use gap::{active_gap, compute_gap_at, estimate_bias, estimate_bias_over, BiasSource};
use problem::CilProblem;
use smo::{select_working_pair, take_step, PairSelection};
use state::{FixReason, Rule, SampleStatus, SolverState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// KKT tolerance on the maximal violating pair.
    pub eps: f64,
    /// SMO step cap; `None` means `200 n`.
    pub max_iter: Option<usize>,
    /// When checkpoints (gap, screening, shrinking) run.
    pub schedule: Schedule,
    /// Dynamic safe screening at checkpoints.
    pub screening: bool,
    /// Shrinking heuristic at checkpoints.
    pub shrinking: bool,
    /// With both enabled: screen while the gap exceeds this, then only shrink.
    pub handoff_gap: Option<f64>,
    /// Margin by which `g_i + b` must push a bound variable outward to count
    /// toward shrinking it.
    pub shrink_threshold: f64,
    /// Check the maintained gradient against a recomputation every this many
    /// steps (debug builds, `n <= 2000`; 0 disables).
    pub verify_gradient_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps: 1e-8,
            max_iter: None,
            schedule: Schedule::default(),
            screening: false,
            shrinking: false,
            handoff_gap: None,
            shrink_threshold: 1e-3,
            verify_gradient_every: 100,
        }
    }
}

/// Snapshot taken at every scheduled checkpoint and once after convergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    /// Gap of the problem over the active set at `bias`.
    pub gap: f64,
    pub bias: f64,
    pub screened_dynamic: usize,
    pub screened_propagation: usize,
    pub shrunk: usize,
    pub deferred: usize,
    pub active: usize,
    pub screened_fraction: f64,
    /// The post-convergence checkpoint. Its screened fraction is what the
    /// dynamic rule would screen at the returned state (nothing is fixed).
    #[serde(rename = "final")]
    pub is_final: bool,
}

/// Receives solver progress. All methods default to doing nothing.
pub trait SolveObserver {
    /// Whether [`SolveObserver::screening`] should receive full reports.
    /// Building them costs `O(n)` per checkpoint.
    fn wants_reports(&self) -> bool {
        false
    }
    fn checkpoint(&mut self, _cp: &Checkpoint) {}
    fn screening(&mut self, _report: &ScreeningReport) {}
}

impl SolveObserver for () {}

/// Solves `pr` from `warm` (or from `a = 0`).
pub fn solve(pr: &CilProblem, warm: Option<SolverState>, cfg: &SolverConfig) -> Result<SolverState> {
    solve_with_observer(pr, warm, cfg, &mut ())
}

pub fn solve_with_observer(
    pr: &CilProblem,
    warm: Option<SolverState>,
    cfg: &SolverConfig,
    obs: &mut dyn SolveObserver,
) -> Result<SolverState> {
    if !(cfg.eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {}", cfg.eps)));
    }
    let n = pr.len();
    let mut st = match warm {
        Some(st) => prepare_warm(st, pr)?,
        None => SolverState::zeros(pr),
    };
    st.iter = 0;
    st.max_iter_reached = false;
    apply_pending(&mut st, pr)?;

    let max_iter = cfg.max_iter.unwrap_or(200 * n);
    let mut handed_off = false;
    let verify = cfg!(debug_assertions) && cfg.verify_gradient_every > 0 && n <= 2000;
    let drift_tol = 1e-8 * pr.c().max(1.0);

    loop {
        if screening::schedule(st.iter, &cfg.schedule) {
            let screen_now = cfg.screening && !handed_off;
            let shrink_now = cfg.shrinking && (!cfg.screening || cfg.handoff_gap.is_none() || handed_off);
            checkpoint(&mut st, pr, cfg, screen_now, shrink_now, &mut handed_off, obs)?;
        }
        match select_working_pair(&st, pr, cfg.eps) {
            PairSelection::Pair { i, j, .. } => {
                if st.iter >= max_iter {
                    st.max_iter_reached = true;
                    break;
                }
                take_step(&mut st, pr, i, j);
                st.iter += 1;
                if st.grad[i].is_nan() || st.grad[j].is_nan() {
                    return Err(Error::Numerical(format!("NaN gradient at iteration {}", st.iter)));
                }
                if verify && st.iter % cfg.verify_gradient_every == 0 {
                    let drift = st.gradient_drift(pr);
                    if drift > drift_tol {
                        return Err(Error::Invariant(format!(
                            "gradient drifted by {drift:e} at iteration {}",
                            st.iter
                        )));
                    }
                }
            }
            PairSelection::Optimal { .. } => {
                if shrink::shrunk_count(&st) == 0 {
                    break;
                }
                shrink::unshrink(&mut st, pr);
                if matches!(select_working_pair(&st, pr, cfg.eps), PairSelection::Optimal { .. }) {
                    break;
                }
                st.counters.unshrink_resumes += 1;
            }
        }
    }
    if shrink::shrunk_count(&st) > 0 {
        shrink::unshrink(&mut st, pr);
    }
    finalize(&mut st, pr, obs)?;
    Ok(st)
}

fn prepare_warm(mut st: SolverState, pr: &CilProblem) -> Result<SolverState> {
    if st.len() != pr.len() {
        return Err(Error::InvalidArgument(format!("warm start has {} samples, problem has {}", st.len(), pr.len())));
    }
    let tol = 1e-9 * pr.c().max(1.0);
    for i in 0..st.len() {
        let (lo, up) = (pr.lower()[i], pr.upper()[i]);
        let a = st.alpha[i];
        if !(a >= lo - tol && a <= up + tol) {
            return Err(Error::InvalidArgument(format!("warm alpha[{i}] = {a} outside [{lo}, {up}]")));
        }
        st.alpha[i] = a.clamp(lo, up);
    }
    st.sync_gradient(pr);
    repair_feasibility(&mut st, pr)?;
    Ok(st)
}

fn apply_pending(st: &mut SolverState, pr: &CilProblem) -> Result<()> {
    let pending = std::mem::take(&mut st.pending);
    if pending.is_empty() {
        return Ok(());
    }
    let mut avoid = vec![false; st.len()];
    for &(i, _, _) in &pending {
        avoid[i] = true;
    }
    for (i, bound, rule) in pending {
        if st.is_active(i) {
            // deferred fixes stay active; the dynamic rule may catch them later
            fix_with_reason(st, pr, i, FixReason::Screened { bound, rule }, Some(&avoid))?;
        }
    }
    Ok(())
}

fn count_fixed(st: &SolverState) -> (usize, usize, usize) {
    let (mut dynamic, mut propagation, mut shrunk) = (0, 0, 0);
    for s in st.status() {
        match s {
            SampleStatus::Fixed(FixReason::Screened { rule: Rule::Dynamic, .. }) => dynamic += 1,
            SampleStatus::Fixed(FixReason::Screened { rule: Rule::Propagation, .. }) => propagation += 1,
            SampleStatus::Fixed(FixReason::Shrunk { .. }) => shrunk += 1,
            SampleStatus::Active => {}
        }
    }
    (dynamic, propagation, shrunk)
}

fn checkpoint(
    st: &mut SolverState,
    pr: &CilProblem,
    cfg: &SolverConfig,
    screen_now: bool,
    shrink_now: bool,
    handed_off: &mut bool,
    obs: &mut dyn SolveObserver,
) -> Result<()> {
    let est = estimate_bias(st, pr);
    st.bias = est.value;
    st.bias_fallback = est.source == BiasSource::Fallback;
    let gap = active_gap(st, pr, st.bias);
    if gap.is_nan() {
        return Err(Error::Numerical(format!("NaN duality gap at iteration {}", st.iter)));
    }
    st.gap = Some(gap);
    let mut deferred = 0;
    if screen_now {
        if obs.wants_reports() {
            let report = screening::dynamic_screen(st, pr, gap)?;
            deferred = report.count(screening::Decision::Deferred);
            obs.screening(&report);
        } else {
            let newly = screening::screen_active(st, pr, gap)?;
            deferred = screening::execute_fixes(st, pr, &newly, Rule::Dynamic)?.len();
        }
        if cfg.handoff_gap.is_some_and(|h| gap <= h) {
            *handed_off = true;
        }
    }
    if shrink_now {
        shrink::shrink_heuristic(st, pr, cfg.shrink_threshold);
    }
    let (dynamic, propagation, shrunk) = count_fixed(st);
    obs.checkpoint(&Checkpoint {
        iteration: st.iter,
        gap,
        bias: st.bias,
        screened_dynamic: dynamic,
        screened_propagation: propagation,
        shrunk,
        deferred,
        active: st.active().len(),
        screened_fraction: (dynamic + propagation) as f64 / st.len().max(1) as f64,
        is_final: false,
    });
    Ok(())
}

fn finalize(st: &mut SolverState, pr: &CilProblem, obs: &mut dyn SolveObserver) -> Result<()> {
    st.sync_gradient(pr);
    let all: Vec<usize> = (0..st.len()).collect();
    let est = estimate_bias_over(st, pr, &all);
    st.bias = est.value;
    st.bias_fallback = est.source == BiasSource::Fallback;
    let gap = compute_gap_at(st, pr, st.bias)?;
    let tol = screening::gap_tolerance(pr);
    if gap < -tol {
        return Err(Error::Invariant(format!("negative duality gap {gap:e}")));
    }
    st.gap = Some(gap);
    let (dynamic, propagation, shrunk) = count_fixed(st);
    let report = screening::evaluate_dynamic(st, pr, st.bias, gap)?;
    obs.checkpoint(&Checkpoint {
        iteration: st.iter,
        gap,
        bias: st.bias,
        screened_dynamic: dynamic,
        screened_propagation: propagation,
        shrunk,
        deferred: 0,
        active: st.active().len(),
        screened_fraction: report.screened_fraction,
        is_final: true,
    });
    Ok(())
}
