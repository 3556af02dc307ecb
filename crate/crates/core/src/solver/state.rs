use serde::{Deserialize, Serialize};

use super::problem::{Bound, CilProblem};
use crate::error::{Error, Result};

/// Which safe rule produced a screening decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Dynamic,
    Propagation,
}

/// Why a variable left the active set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixReason {
    /// Provably at `bound` at the optimum.
    Screened { bound: Bound, rule: Rule },
    /// Heuristically removed; restored before convergence is declared.
    Shrunk { bound: Bound },
}

impl FixReason {
    pub fn bound(&self) -> Bound {
        match *self {
            FixReason::Screened { bound, .. } | FixReason::Shrunk { bound } => bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleStatus {
    Active,
    Fixed(FixReason),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub smo_steps: usize,
    pub deferred_fixes: usize,
    pub unshrink_passes: usize,
    /// Un-shrink passes that found KKT violations and resumed optimization.
    pub unshrink_resumes: usize,
}

/// Dual iterate of one inner problem together with the bookkeeping the solver
/// maintains: gradient `g_i = sum_j a_j H_ij - y_i`, bias estimate, and the
/// active/fixed partition.
///
/// While a solve runs, `g` is kept current only on the active set; fixed
/// entries are refreshed by [`SolverState::sync_gradient`], which every public
/// consumer of a finished state can rely on having been called.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub(crate) alpha: Vec<f64>,
    pub(crate) grad: Vec<f64>,
    pub(crate) bias: f64,
    pub(crate) status: Vec<SampleStatus>,
    pub(crate) active: Vec<usize>,
    pub(crate) stale: bool,
    pub(crate) gap: Option<f64>,
    pub(crate) iter: usize,
    pub(crate) max_iter_reached: bool,
    pub(crate) bias_fallback: bool,
    pub(crate) pending: Vec<(usize, Bound, Rule)>,
    pub(crate) strikes: Vec<u8>,
    /// Number of variables currently shrunk.
    pub(crate) shrunk: usize,
    pub(crate) counters: Counters,
}

impl SolverState {
    /// `a = 0`, `g = -y`, every sample active.
    pub fn zeros(pr: &CilProblem) -> Self {
        let n = pr.len();
        let grad = pr.y().iter().map(|&y| -y).collect();
        Self::from_parts(vec![0.0; n], grad)
    }

    /// State at `alpha` with the gradient computed from scratch.
    pub fn from_alpha(pr: &CilProblem, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != pr.len() {
            return Err(Error::InvalidArgument(format!("alpha has {} entries for {} samples", alpha.len(), pr.len())));
        }
        let grad = exact_gradient(pr, &alpha);
        Ok(Self::from_parts(alpha, grad))
    }

    /// State with a caller-supplied gradient (not checked against `alpha`).
    pub fn from_parts(alpha: Vec<f64>, grad: Vec<f64>) -> Self {
        let n = alpha.len();
        assert_eq!(n, grad.len());
        Self {
            alpha,
            grad,
            bias: 0.0,
            status: vec![SampleStatus::Active; n],
            active: (0..n).collect(),
            stale: false,
            gap: None,
            iter: 0,
            max_iter_reached: false,
            bias_fallback: false,
            pending: Vec::new(),
            strikes: vec![0; n],
            shrunk: 0,
            counters: Counters::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn grad(&self) -> &[f64] {
        debug_assert!(!self.stale, "gradient read while fixed entries are stale");
        &self.grad
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn set_bias(&mut self, b: f64) {
        self.bias = b;
    }

    pub fn status(&self) -> &[SampleStatus] {
        &self.status
    }

    /// Indices of active samples, ascending.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.status[i] == SampleStatus::Active
    }

    /// Latest duality gap recorded by the solver.
    pub fn gap(&self) -> Option<f64> {
        self.gap
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }

    pub fn max_iter_reached(&self) -> bool {
        self.max_iter_reached
    }

    /// Set when the last bias estimate had no candidate samples.
    pub fn bias_fallback(&self) -> bool {
        self.bias_fallback
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    /// Fixes queued for the next solve (e.g. from propagation screening).
    pub fn pending_fixes(&self) -> &[(usize, Bound, Rule)] {
        &self.pending
    }

    pub fn queue_fix(&mut self, i: usize, bound: Bound, rule: Rule) {
        self.pending.push((i, bound, rule));
    }

    /// Samples fixed by a safe rule, with the bound they were fixed at.
    pub fn screened(&self) -> impl Iterator<Item = (usize, Bound, Rule)> + '_ {
        self.status.iter().enumerate().filter_map(|(i, s)| match s {
            SampleStatus::Fixed(FixReason::Screened { bound, rule }) => Some((i, *bound, *rule)),
            _ => None,
        })
    }

    pub fn sum_alpha(&self) -> f64 {
        self.alpha.iter().sum()
    }

    pub(crate) fn rebuild_active(&mut self) {
        self.active.clear();
        self.active.extend((0..self.len()).filter(|&i| self.status[i] == SampleStatus::Active));
    }

    pub(crate) fn set_status(&mut self, i: usize, status: SampleStatus) {
        let is_shrunk = |s: SampleStatus| matches!(s, SampleStatus::Fixed(FixReason::Shrunk { .. }));
        let was_active = self.status[i] == SampleStatus::Active;
        if is_shrunk(self.status[i]) {
            self.shrunk -= 1;
        }
        if is_shrunk(status) {
            self.shrunk += 1;
        }
        self.status[i] = status;
        let now_active = status == SampleStatus::Active;
        if was_active && !now_active {
            if let Ok(pos) = self.active.binary_search(&i) {
                self.active.remove(pos);
            }
            self.stale = true;
        } else if !was_active && now_active {
            if let Err(pos) = self.active.binary_search(&i) {
                self.active.insert(pos, i);
            }
        }
    }

    /// Recomputes the gradient of every non-active sample from the nonzero
    /// dual variables.
    pub fn sync_gradient(&mut self, pr: &CilProblem) {
        if !self.stale {
            return;
        }
        let targets: Vec<usize> = (0..self.len()).filter(|&i| self.status[i] != SampleStatus::Active).collect();
        refresh_gradient(pr, &self.alpha, &mut self.grad, &targets);
        self.stale = false;
    }

    /// Largest deviation of the maintained gradient from a fresh computation.
    pub fn gradient_drift(&self, pr: &CilProblem) -> f64 {
        let exact = exact_gradient(pr, &self.alpha);
        self.active
            .iter()
            .map(|&i| (exact[i] - self.grad[i]).abs())
            .chain(
                (!self.stale).then(|| (0..self.len()).map(|i| (exact[i] - self.grad[i]).abs())).into_iter().flatten(),
            )
            .fold(0.0, f64::max)
    }

    /// Box and equality feasibility, with tolerance scaled by `C`.
    pub fn check_feasible(&self, pr: &CilProblem) -> Result<()> {
        let tol = 1e-9 * pr.c().max(1.0);
        let sum = self.sum_alpha();
        if sum.abs() > tol {
            return Err(Error::Invariant(format!("sum of dual variables is {sum:e}")));
        }
        for i in 0..self.len() {
            let a = self.alpha[i];
            if a < pr.lower()[i] || a > pr.upper()[i] || !a.is_finite() {
                return Err(Error::Invariant(format!(
                    "alpha[{i}] = {a} outside [{}, {}]",
                    pr.lower()[i],
                    pr.upper()[i]
                )));
            }
        }
        Ok(())
    }
}

/// `g_i = sum_j a_j H_ij - y_i` from scratch, using rows of nonzero `a_j`.
pub fn exact_gradient(pr: &CilProblem, alpha: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; pr.len()];
    let all: Vec<usize> = (0..pr.len()).collect();
    refresh_gradient(pr, alpha, &mut g, &all);
    g
}

fn refresh_gradient(pr: &CilProblem, alpha: &[f64], grad: &mut [f64], targets: &[usize]) {
    if targets.is_empty() {
        return;
    }
    for &t in targets {
        grad[t] = -pr.y()[t];
    }
    for (k, &a) in alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = pr.kernel().row_unchecked(k);
        for &t in targets {
            grad[t] += a * row[t];
        }
    }
}
