//! Unsafe active-set shrinking in the style of LIBSVM/SVMLight. A variable
//! that sits at a bound and whose gradient keeps pushing it against that bound
//! is removed from the working problem; everything is restored and re-checked
//! before the solver may stop.

use super::problem::{Bound, CilProblem};
use super::state::{FixReason, SampleStatus, SolverState};

/// Consecutive checks a variable must pass before it is shrunk.
pub const STRIKES_TO_SHRINK: u8 = 2;

/// Shrinks active variables at a bound that have been outside the current
/// violation interval by more than `threshold` on two consecutive calls: a
/// variable at its lower bound whose `g_i` exceeds every `g_j` of variables
/// that can decrease, or one at its upper bound whose `g_i` is below every
/// `g_j` of variables that can increase. Such a variable cannot be part of a
/// violating pair. Returns how many were shrunk.
pub fn shrink_heuristic(st: &mut SolverState, pr: &CilProblem, threshold: f64) -> usize {
    let (lo, up) = (pr.lower(), pr.upper());
    let mut min_up = f64::INFINITY;
    let mut max_low = f64::NEG_INFINITY;
    for &i in st.active() {
        if st.alpha[i] < up[i] {
            min_up = min_up.min(st.grad[i]);
        }
        if st.alpha[i] > lo[i] {
            max_low = max_low.max(st.grad[i]);
        }
    }
    let mut shrunk = Vec::new();
    for k in 0..st.active.len() {
        let i = st.active[k];
        let g = st.grad[i];
        let pushed = if st.alpha[i] == lo[i] && g > max_low + threshold {
            Some(Bound::Lower)
        } else if st.alpha[i] == up[i] && g < min_up - threshold {
            Some(Bound::Upper)
        } else {
            None
        };
        match pushed {
            Some(bound) => {
                st.strikes[i] = st.strikes[i].saturating_add(1);
                if st.strikes[i] >= STRIKES_TO_SHRINK {
                    shrunk.push((i, bound));
                }
            }
            None => st.strikes[i] = 0,
        }
    }
    for &(i, bound) in &shrunk {
        st.set_status(i, SampleStatus::Fixed(FixReason::Shrunk { bound }));
    }
    shrunk.len()
}

pub fn shrunk_count(st: &SolverState) -> usize {
    st.shrunk
}

/// Returns every shrunk variable to the active set with a reconstructed
/// gradient. Screened variables stay fixed.
pub fn unshrink(st: &mut SolverState, pr: &CilProblem) -> usize {
    // make every fixed gradient current, then reactivate
    st.sync_gradient(pr);
    let mut restored = 0;
    for i in 0..st.len() {
        if let SampleStatus::Fixed(FixReason::Shrunk { .. }) = st.status[i] {
            st.status[i] = SampleStatus::Active;
            st.strikes[i] = 0;
            restored += 1;
        }
    }
    st.shrunk = 0;
    if restored > 0 {
        st.rebuild_active();
        st.counters.unshrink_passes += 1;
    }
    // other fixed entries are still current after the sync
    st.stale = false;
    restored
}
