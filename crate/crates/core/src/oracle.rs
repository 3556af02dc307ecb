//! Slow reference solvers for testing: a projected-gradient solver for one
//! inner problem, a KKT checker, and a CCCP trainer built on them.
//!
//! Nothing here shares code with the SMO path beyond problem construction and
//! bias estimation. The inner solver runs accelerated projected gradient
//! (with restarts) on the dense dual, projecting exactly onto
//! `{sum(a) = 0} ∩ box` by bisection on the multiplier of the equality. Every
//! few hundred steps it guesses the optimal face from the iterate and solves
//! the KKT linear system on that face; a guess is accepted only when the
//! result passes [`check_kkt`].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cccp::{compute_mu, CccpTrace, Model, OuterRecord, TrainConfig};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::kernel::KernelCache;
use crate::solver::gap::estimate_bias_over;
use crate::solver::problem::{build_problem, CilProblem};
use crate::solver::state::SolverState;

/// Largest problem the reference solver accepts.
pub const MAX_REFERENCE_N: usize = 500;

const MAX_STEPS: usize = 400_000;
const POLISH_EVERY: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktViolationReport {
    /// Per-sample violation of the optimality case conditions.
    pub violations: Vec<f64>,
    pub max_violation: f64,
    /// `|sum(a)|`.
    pub sum_residual: f64,
    /// Largest distance of any `a_i` outside its box.
    pub box_residual: f64,
    /// Every residual is within the requested tolerance.
    pub ok: bool,
}

impl KktViolationReport {
    pub fn max_residual(&self) -> f64 {
        self.max_violation.max(self.sum_residual).max(self.box_residual)
    }
}

fn dense_gram(pr: &CilProblem) -> DMatrix<f64> {
    let n = pr.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let row = pr.kernel().row_unchecked(i);
        for j in 0..n {
            h[(i, j)] = row[j];
        }
    }
    h
}

/// With `D_i = (Ha)_i + b - y_i`: interior samples violate by `|D_i|`, samples
/// at the lower bound by `max(0, -D_i)`, at the upper bound by `max(0, D_i)`.
/// A sample counts as at a bound within `1e-12 max(1, C)`.
pub fn check_kkt(pr: &CilProblem, alpha: &[f64], b: f64, tol: f64) -> KktViolationReport {
    let h = dense_gram(pr);
    let a = DVector::from_column_slice(alpha);
    let g = &h * &a;
    check_with_gradient(pr, alpha, g.as_slice(), b, tol)
}

fn check_with_gradient(pr: &CilProblem, alpha: &[f64], ha: &[f64], b: f64, tol: f64) -> KktViolationReport {
    let at = 1e-12 * pr.c().max(1.0);
    let mut box_residual: f64 = 0.0;
    let violations: Vec<f64> = (0..pr.len())
        .map(|i| {
            let (lo, up) = (pr.lower()[i], pr.upper()[i]);
            box_residual = box_residual.max(lo - alpha[i]).max(alpha[i] - up);
            let d = ha[i] + b - pr.y()[i];
            let at_lower = alpha[i] <= lo + at;
            let at_upper = alpha[i] >= up - at;
            match (at_lower, at_upper) {
                (true, true) => 0.0,
                (true, false) => (-d).max(0.0),
                (false, true) => d.max(0.0),
                (false, false) => d.abs(),
            }
        })
        .collect();
    let max_violation = violations.iter().copied().fold(0.0, f64::max);
    let sum_residual = alpha.iter().sum::<f64>().abs();
    let ok = max_violation.max(sum_residual).max(box_residual) <= tol;
    KktViolationReport { violations, max_violation, sum_residual, box_residual, ok }
}

/// Euclidean projection of `v` onto `{sum(a) = 0, lower <= a <= upper}`:
/// `a = clamp(v - t)` with `t` found by bisection.
fn project(v: &[f64], lo: &[f64], up: &[f64]) -> Vec<f64> {
    let total = |t: f64| -> f64 { v.iter().zip(lo).zip(up).map(|((&x, &l), &u)| (x - t).clamp(l, u)).sum() };
    let mut t_lo = v.iter().zip(up).map(|(&x, &u)| x - u).fold(f64::INFINITY, f64::min);
    let mut t_hi = v.iter().zip(lo).map(|(&x, &l)| x - l).fold(f64::NEG_INFINITY, f64::max);
    // total(t_lo) >= 0 >= total(t_hi)
    for _ in 0..200 {
        let mid = 0.5 * (t_lo + t_hi);
        if mid <= t_lo || mid >= t_hi {
            break;
        }
        if total(mid) > 0.0 {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    let t = 0.5 * (t_lo + t_hi);
    let mut a: Vec<f64> = v.iter().zip(lo).zip(up).map(|((&x, &l), &u)| (x - t).clamp(l, u)).collect();
    // remove the bisection residue on the free coordinates
    let free: Vec<usize> = (0..a.len()).filter(|&i| a[i] > lo[i] && a[i] < up[i]).collect();
    if !free.is_empty() {
        let shift = a.iter().sum::<f64>() / free.len() as f64;
        for &i in &free {
            a[i] = (a[i] - shift).clamp(lo[i], up[i]);
        }
    }
    a
}

fn objective(h: &DMatrix<f64>, y: &DVector<f64>, a: &DVector<f64>) -> f64 {
    0.5 * a.dot(&(h * a)) - y.dot(a)
}

/// Guesses the optimal face from `a` and its gradient, then solves
/// `H_FF a_F + b 1 = y_F - H_FB a_B`, `sum(a_F) = -sum(a_B)` on the free set.
fn polish(pr: &CilProblem, h: &DMatrix<f64>, a: &[f64], grad: &[f64]) -> Option<Vec<f64>> {
    let n = pr.len();
    let (lo, up) = (pr.lower(), pr.upper());
    let st = SolverState::from_parts(a.to_vec(), grad.to_vec());
    let all: Vec<usize> = (0..n).collect();
    let b = estimate_bias_over(&st, pr, &all).value;
    let width = 1e-6 * pr.c().max(1.0);
    let mut x = a.to_vec();
    let mut free = Vec::new();
    for i in 0..n {
        let d = grad[i] + b;
        if lo[i] == up[i] || (a[i] - lo[i] <= width && d > 0.0) {
            x[i] = lo[i];
        } else if up[i] - a[i] <= width && d < 0.0 {
            x[i] = up[i];
        } else {
            free.push(i);
        }
    }
    let fixed_sum: f64 = (0..n).filter(|i| !free.contains(i)).map(|i| x[i]).sum();
    if free.is_empty() {
        return (fixed_sum.abs() <= 1e-12 * pr.c().max(1.0)).then_some(x);
    }
    let m = free.len();
    let mut sys = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            sys[(r, c)] = h[(i, j)];
        }
        sys[(r, m)] = 1.0;
        sys[(m, r)] = 1.0;
        let mut v = pr.y()[i];
        for j in 0..n {
            if !free.contains(&j) && x[j] != 0.0 {
                v -= h[(i, j)] * x[j];
            }
        }
        rhs[r] = v;
    }
    rhs[m] = -fixed_sum;
    let sol = sys.svd(true, true).solve(&rhs, 1e-13).ok()?;
    for (r, &i) in free.iter().enumerate() {
        let v = sol[r];
        let slack = 1e-12 * pr.c().max(1.0);
        if v < lo[i] - slack || v > up[i] + slack {
            return None;
        }
        x[i] = v.clamp(lo[i], up[i]);
    }
    Some(x)
}

/// Reference solution `(a, b)` of one inner problem, with the KKT residual
/// at most `tol`. Limited to [`MAX_REFERENCE_N`] samples.
pub fn solve_cil_reference(pr: &CilProblem, tol: f64) -> Result<(Vec<f64>, f64)> {
    let n = pr.len();
    if n > MAX_REFERENCE_N {
        return Err(Error::Oracle(format!("{n} samples exceed the reference limit of {MAX_REFERENCE_N}")));
    }
    let (lo, up) = (pr.lower(), pr.upper());
    if (0..n).all(|i| lo[i] == up[i]) {
        return Ok((vec![0.0; n], 0.0));
    }
    let h = dense_gram(pr);
    let y = DVector::from_column_slice(pr.y());
    let lipschitz = h.clone().symmetric_eigenvalues().max().max(1e-12);
    let step = 1.0 / lipschitz;

    let finish = |a: Vec<f64>| -> Option<(Vec<f64>, f64)> {
        let av = DVector::from_column_slice(&a);
        let ha = &h * &av;
        let grad: Vec<f64> = (0..n).map(|i| ha[i] - y[i]).collect();
        let st = SolverState::from_parts(a.clone(), grad);
        let all: Vec<usize> = (0..n).collect();
        let b = estimate_bias_over(&st, pr, &all).value;
        check_with_gradient(pr, &a, ha.as_slice(), b, tol).ok.then_some((a, b))
    };

    let mut a = DVector::from_element(n, 0.0);
    let mut prev = a.clone();
    let mut momentum = 1.0f64;
    let mut prev_obj = objective(&h, &y, &a);
    for k in 1..=MAX_STEPS {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / t_next;
        let z = &a + (&a - &prev) * beta;
        let grad = &h * &z - &y;
        let v: Vec<f64> = (0..n).map(|i| z[i] - step * grad[i]).collect();
        let next = DVector::from_vec(project(&v, lo, up));
        let obj = objective(&h, &y, &next);
        prev = std::mem::replace(&mut a, next);
        momentum = t_next;
        if obj > prev_obj {
            // restart the momentum when the objective goes up
            momentum = 1.0;
            prev = a.clone();
        }
        prev_obj = obj;
        if k % POLISH_EVERY == 0 {
            let ga = &h * &a - &y;
            if let Some(x) = polish(pr, &h, a.as_slice(), ga.as_slice()) {
                if let Some(done) = finish(x) {
                    return Ok(done);
                }
            }
            if let Some(done) = finish(a.as_slice().to_vec()) {
                return Ok(done);
            }
        }
    }
    Err(Error::Oracle(format!("no convergence to {tol:e} within {MAX_STEPS} steps")))
}

/// Reference CCCP: `mu = 0`, then alternate [`solve_cil_reference`] and the
/// `mu` update until `mu` repeats. No screening, shrinking or warm starts.
pub fn solve_rsvm_reference(ds: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    solve_rsvm_reference_trace(ds, cfg, 1e-10).map(|(m, _)| m)
}

/// [`solve_rsvm_reference`] with the per-iteration records and the KKT
/// tolerance used for every inner problem.
pub fn solve_rsvm_reference_trace(ds: &Dataset, cfg: &TrainConfig, tol: f64) -> Result<(Model, CccpTrace)> {
    cfg.validate()?;
    if ds.len() > MAX_REFERENCE_N {
        return Err(Error::Oracle(format!("{} samples exceed the reference limit of {MAX_REFERENCE_N}", ds.len())));
    }
    let kernel = Arc::new(KernelCache::new(cfg.kernel, Arc::new(ds.clone()), cfg.cache)?);
    let n = ds.len();
    let mut mu = vec![0.0; n];
    let mut trace = CccpTrace::default();
    let mut last = None;
    for outer in 0..cfg.max_outer {
        let pr = build_problem(Arc::clone(&kernel), cfg.c, mu.clone())?;
        let (alpha, b) = solve_cil_reference(&pr, tol)?;
        let mut st = SolverState::from_alpha(&pr, alpha)?;
        st.set_bias(b);
        let next = compute_mu(&st, &pr, cfg.s);
        trace.outer.push(OuterRecord {
            iteration: outer,
            mu_changes: 0,
            mu_active: mu.iter().filter(|&&m| m != 0.0).count(),
            ramp_objective: crate::cccp::ramp_objective(&st, &pr, cfg.s),
            cil_iterations: 0,
            screened_dynamic: 0,
            screened_propagation: 0,
            propagated_next: 0,
            final_gap: crate::solver::gap::compute_gap_at(&st, &pr, b)?,
            max_iter_reached: false,
            wall_time_s: 0.0,
        });
        let done = next == mu;
        last = Some(st);
        if done {
            trace.converged = true;
            break;
        }
        mu = next;
    }
    trace.outer_cap_reached = !trace.converged;
    let st = last.expect("at least one outer iteration runs");
    let model = Model::from_state(&st, &kernel, cfg, &trace)?;
    Ok((model, trace))
}
