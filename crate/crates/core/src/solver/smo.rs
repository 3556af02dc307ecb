use super::problem::CilProblem;
use super::state::SolverState;

/// Smallest curvature used along a pair direction.
pub const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairSelection {
    /// `i` can move up, `j` can move down, and moving along `e_i - e_j`
    /// decreases the objective by at least the first-order `violation`.
    Pair {
        i: usize,
        j: usize,
        violation: f64,
    },
    Optimal {
        violation: f64,
    },
}

/// Maximal violating pair over the active set: `i` minimizes `g` among
/// variables below their upper bound, `j` maximizes `g` among variables above
/// their lower bound. Ties go to the lowest index.
pub fn select_working_pair(st: &SolverState, pr: &CilProblem, eps: f64) -> PairSelection {
    let (lo, up) = (pr.lower(), pr.upper());
    let mut best_i = usize::MAX;
    let mut best_j = usize::MAX;
    let mut min_up = f64::INFINITY;
    let mut max_low = f64::NEG_INFINITY;
    let mut visit = |k: usize, a: f64, g: f64| {
        if a < up[k] && g < min_up {
            min_up = g;
            best_i = k;
        }
        if a > lo[k] && g > max_low {
            max_low = g;
            best_j = k;
        }
    };
    if st.active.len() == st.len() {
        for (k, (&a, &g)) in st.alpha.iter().zip(&st.grad).enumerate() {
            visit(k, a, g);
        }
    } else {
        for &k in &st.active {
            visit(k, st.alpha[k], st.grad[k]);
        }
    }
    if best_i == usize::MAX || best_j == usize::MAX {
        return PairSelection::Optimal { violation: 0.0 };
    }
    let violation = max_low - min_up;
    if violation <= eps {
        PairSelection::Optimal { violation: violation.max(0.0) }
    } else {
        PairSelection::Pair { i: best_i, j: best_j, violation }
    }
}

/// Analytic minimization along `a_i += d, a_j -= d`, clipped to both boxes.
/// Updates the gradient over the active set and returns the step taken.
pub(crate) fn take_step(st: &mut SolverState, pr: &CilProblem, i: usize, j: usize) -> f64 {
    let kernel = pr.kernel();
    let row_i = kernel.row_unchecked(i);
    let row_j = kernel.row_unchecked(j);
    let curvature = (row_i[i] + row_j[j] - 2.0 * row_i[j]).max(TAU);
    let room_i = pr.upper()[i] - st.alpha[i];
    let room_j = st.alpha[j] - pr.lower()[j];
    let newton = (st.grad[j] - st.grad[i]) / curvature;
    let delta = newton.min(room_i).min(room_j);
    if delta <= 0.0 {
        return 0.0;
    }
    st.alpha[i] = if delta == room_i { pr.upper()[i] } else { st.alpha[i] + delta };
    st.alpha[j] = if delta == room_j { pr.lower()[j] } else { st.alpha[j] - delta };
    if st.active.len() == st.len() {
        for ((g, &hi), &hj) in st.grad.iter_mut().zip(row_i.iter()).zip(row_j.iter()) {
            *g += delta * (hi - hj);
        }
    } else {
        for &k in &st.active {
            st.grad[k] += delta * (row_i[k] - row_j[k]);
        }
        st.stale = true;
    }
    st.counters.smo_steps += 1;
    delta
}
