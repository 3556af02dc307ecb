//! Ramp-loss SVM training by the concave-convex procedure.
//!
//! The ramp loss `R_s(z) = H_1(z) - H_s(z) = min(1 - s, H_1(z))` splits the
//! objective into a convex hinge part and a concave part `-C H_s`. Each outer
//! iteration linearizes the concave part at the current model, which yields
//! the per-sample weights `mu_i = C [y_i f(x_i) < s]`, and solves the
//! resulting convex inner problem. The procedure stops when `mu` repeats.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Feature};
use crate::error::{Error, Result};
use crate::kernel::{CacheConfig, KernelCache, KernelKind, KernelSpec};
use crate::screening::{compute_propagation_bounds, propagate_screen, PropagationBounds, Schedule, ScreeningReport};
use crate::solver::gap::hinge;
use crate::solver::problem::{build_problem, CilProblem};
use crate::solver::state::{Rule, SolverState};
use crate::solver::{solve_with_observer, Checkpoint, SolveObserver, SolverConfig};

/// Which variable-elimination strategy the inner solver uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Dynamic and propagation safe screening.
    #[serde(rename = "safe")]
    Safe,
    /// Shrinking heuristic only.
    #[serde(rename = "shrink")]
    Shrink,
    /// Safe screening until the gap reaches the handoff value, then shrinking.
    #[serde(rename = "shrink+safe")]
    ShrinkSafe,
    #[serde(rename = "none")]
    None,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Safe, Mode::Shrink, Mode::ShrinkSafe, Mode::None];

    pub fn screens(self) -> bool {
        matches!(self, Mode::Safe | Mode::ShrinkSafe)
    }

    pub fn shrinks(self) -> bool {
        matches!(self, Mode::Shrink | Mode::ShrinkSafe)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Safe => "safe",
            Mode::Shrink => "shrink",
            Mode::ShrinkSafe => "shrink+safe",
            Mode::None => "none",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "safe" => Ok(Mode::Safe),
            "shrink" => Ok(Mode::Shrink),
            "shrink+safe" | "safe+shrink" => Ok(Mode::ShrinkSafe),
            "none" => Ok(Mode::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected safe, shrink, shrink+safe or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kernel: KernelSpec,
    pub c: f64,
    /// Ramp parameter; must be `<= 0`.
    pub s: f64,
    pub mode: Mode,
    pub eps: f64,
    /// Inner SMO step cap per problem; `None` means `200 n`.
    pub max_iter: Option<usize>,
    pub schedule: Schedule,
    /// Gap at which `shrink+safe` stops screening and starts shrinking.
    pub handoff_gap: f64,
    pub shrink_threshold: f64,
    pub max_outer: usize,
    /// Carry screened samples between inner problems (screening modes only).
    pub propagation: bool,
    pub cache: CacheConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec { kind: KernelKind::Gaussian, kappa: 0.5 },
            c: 1.0,
            s: 0.0,
            mode: Mode::Safe,
            eps: 1e-8,
            max_iter: None,
            schedule: Schedule::default(),
            handoff_gap: 1e-4,
            shrink_threshold: 1e-3,
            max_outer: 20,
            propagation: true,
            cache: CacheConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidArgument(format!("C must be positive and finite, got {}", self.c)));
        }
        if !(self.s <= 0.0) {
            return Err(Error::InvalidArgument(format!("s must be <= 0, got {}", self.s)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {}", self.eps)));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidArgument("max_outer must be at least 1".into()));
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        let both = self.mode == Mode::ShrinkSafe;
        SolverConfig {
            eps: self.eps,
            max_iter: self.max_iter,
            schedule: self.schedule,
            screening: self.mode.screens(),
            shrinking: self.mode.shrinks(),
            handoff_gap: both.then_some(self.handoff_gap),
            shrink_threshold: self.shrink_threshold,
            ..SolverConfig::default()
        }
    }

    fn propagates(&self) -> bool {
        self.propagation && self.mode.screens()
    }
}

/// `mu_i = C` when `y_i f(x_i) < s`, else 0, with `f_i = g_i + y_i + b`.
pub fn compute_mu(st: &SolverState, pr: &CilProblem, s: f64) -> Vec<f64> {
    let c = pr.c();
    st.grad().iter().zip(pr.y()).map(|(&g, &y)| if y * (g + y + st.bias()) < s { c } else { 0.0 }).collect()
}

/// `R_s(z) = H_1(z) - H_s(z)`.
pub fn ramp_loss(z: f64, s: f64) -> f64 {
    hinge(z) - (s - z).max(0.0)
}

/// `1/2 |w|^2 + C sum R_s(y_i f(x_i))` at the state's `(a, b)`.
pub fn ramp_objective(st: &SolverState, pr: &CilProblem, s: f64) -> f64 {
    let mut w2 = 0.0;
    let mut loss = 0.0;
    for ((&g, &y), &a) in st.grad().iter().zip(pr.y()).zip(st.alpha()) {
        w2 += (g + y) * a;
        loss += ramp_loss(y * (g + y + st.bias()), s);
    }
    0.5 * w2 + pr.c() * loss
}

/// Margins `y_i f(x_i)` on the training samples.
pub fn margins(st: &SolverState, pr: &CilProblem) -> Vec<f64> {
    st.grad().iter().zip(pr.y()).map(|(&g, &y)| y * (g + y + st.bias())).collect()
}

/// Summary of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    /// Samples whose `mu` differs from the previous problem.
    pub mu_changes: usize,
    /// Samples with `mu = C` in this problem.
    pub mu_active: usize,
    pub ramp_objective: f64,
    pub cil_iterations: usize,
    pub screened_dynamic: usize,
    pub screened_propagation: usize,
    /// Propagation decisions handed to the next problem.
    pub propagated_next: usize,
    pub final_gap: f64,
    pub max_iter_reached: bool,
    pub wall_time_s: f64,
}

/// One inner-solver checkpoint tagged with its outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub outer: usize,
    #[serde(flatten)]
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CccpTrace {
    pub outer: Vec<OuterRecord>,
    pub trajectory: Vec<TracePoint>,
    pub converged: bool,
    pub outer_cap_reached: bool,
    pub wall_time_s: f64,
}

impl CccpTrace {
    pub fn inner_iterations(&self) -> usize {
        self.outer.iter().map(|o| o.cil_iterations).sum()
    }

    /// Screened fraction at the last checkpoint before convergence of the
    /// last inner problem, and the evaluate-only fraction at convergence.
    pub fn final_screened_fraction(&self) -> f64 {
        self.trajectory.iter().rev().find(|p| p.checkpoint.is_final).map_or(0.0, |p| p.checkpoint.screened_fraction)
    }
}

/// Hooks into a training run, for auditing. All methods default to no-ops.
pub trait CccpObserver {
    /// Whether per-checkpoint screening reports are wanted (costs `O(n)` each).
    fn wants_reports(&self) -> bool {
        false
    }
    fn checkpoint(&mut self, _outer: usize, _cp: &Checkpoint) {}
    fn screening(&mut self, _outer: usize, _report: &ScreeningReport) {}
    /// Inner problem `outer` has been solved.
    fn solved(&mut self, _outer: usize, _pr: &CilProblem, _st: &SolverState) {}
    /// Propagation decisions for problem `outer + 1`, made from the solution
    /// of problem `outer`.
    fn propagation(
        &mut self,
        _outer: usize,
        _next: &CilProblem,
        _bounds: &PropagationBounds,
        _report: &ScreeningReport,
    ) {
    }
}

impl CccpObserver for () {}

struct Forward<'a> {
    outer: usize,
    inner: &'a mut dyn CccpObserver,
    trace: &'a mut Vec<TracePoint>,
}

impl SolveObserver for Forward<'_> {
    fn wants_reports(&self) -> bool {
        self.inner.wants_reports()
    }

    fn checkpoint(&mut self, cp: &Checkpoint) {
        self.trace.push(TracePoint { outer: self.outer, checkpoint: cp.clone() });
        self.inner.checkpoint(self.outer, cp);
    }

    fn screening(&mut self, report: &ScreeningReport) {
        self.inner.screening(self.outer, report);
    }
}

/// Checks that the linearization used for `mu` majorizes the concave part at
/// the new margins: `-C H_s(z') <= -C H_s(z) + mu (z' - z)` per sample.
fn check_majorization(prev: &[f64], next: &[f64], mu: &[f64], c: f64, s: f64) -> Result<()> {
    for i in 0..prev.len() {
        let lhs = -c * (s - next[i]).max(0.0);
        let rhs = -c * (s - prev[i]).max(0.0) + mu[i] * (next[i] - prev[i]);
        if lhs > rhs + 1e-8 * c.max(1.0) {
            return Err(Error::Invariant(format!("tangent bound fails for sample {i}: {lhs} > {rhs}")));
        }
    }
    Ok(())
}

/// Trains on `ds` with the given configuration.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(Model, CccpTrace)> {
    cfg.validate()?;
    let kernel = Arc::new(KernelCache::new(cfg.kernel, Arc::new(ds.clone()), cfg.cache)?);
    train_with_kernel(kernel, cfg, &mut ())
}

/// Trains against an existing kernel cache, reporting progress to `obs`.
pub fn train_with_kernel(
    kernel: Arc<KernelCache>,
    cfg: &TrainConfig,
    obs: &mut dyn CccpObserver,
) -> Result<(Model, CccpTrace)> {
    cfg.validate()?;
    if kernel.spec() != cfg.kernel {
        return Err(Error::InvalidArgument("kernel cache does not match the configuration".into()));
    }
    let start = Instant::now();
    let n = kernel.len();
    let c = cfg.c;
    let solver_cfg = cfg.solver_config();
    let mut trace = CccpTrace::default();
    let mut pr = build_problem(Arc::clone(&kernel), c, vec![0.0; n])?;
    let mut prev_mu = vec![0.0; n];
    let mut prev_margins: Option<Vec<f64>> = None;
    let mut warm: Option<SolverState> = None;
    let mut last: Option<SolverState> = None;

    for outer in 0..cfg.max_outer {
        let t0 = Instant::now();
        let mut fwd = Forward { outer, inner: obs, trace: &mut trace.trajectory };
        let st = solve_with_observer(&pr, warm.take(), &solver_cfg, &mut fwd)?;
        obs.solved(outer, &pr, &st);

        let z = margins(&st, &pr);
        if let Some(prev) = &prev_margins {
            check_majorization(prev, &z, pr.mu(), c, cfg.s)?;
        }
        let mu_next = compute_mu(&st, &pr, cfg.s);
        let converged = mu_next.as_slice() == pr.mu();
        let mut record = OuterRecord {
            iteration: outer,
            mu_changes: pr.mu().iter().zip(&prev_mu).filter(|(a, b)| a != b).count(),
            mu_active: pr.mu().iter().filter(|&&m| m != 0.0).count(),
            ramp_objective: ramp_objective(&st, &pr, cfg.s),
            cil_iterations: st.iterations(),
            screened_dynamic: st.screened().filter(|s| s.2 == Rule::Dynamic).count(),
            screened_propagation: st.screened().filter(|s| s.2 == Rule::Propagation).count(),
            propagated_next: 0,
            final_gap: st.gap().unwrap_or(f64::NAN),
            max_iter_reached: st.max_iter_reached(),
            wall_time_s: 0.0,
        };

        if converged {
            record.wall_time_s = t0.elapsed().as_secs_f64();
            trace.outer.push(record);
            trace.converged = true;
            last = Some(st);
            break;
        }

        let next_pr = build_problem(Arc::clone(&kernel), c, mu_next)?;
        let (bounds, mut warm_st) = compute_propagation_bounds(&st, &pr, &next_pr)?;
        if cfg.propagates() {
            let report = propagate_screen(&st, &next_pr, &bounds, Some(kernel.row_norms()))?;
            for (i, d) in report.decisions.iter().enumerate() {
                if let Some(bound) = d.bound() {
                    warm_st.queue_fix(i, bound, Rule::Propagation);
                }
            }
            record.propagated_next = warm_st.pending_fixes().len();
            obs.propagation(outer, &next_pr, &bounds, &report);
        }
        record.wall_time_s = t0.elapsed().as_secs_f64();
        trace.outer.push(record);

        prev_mu = pr.mu().to_vec();
        prev_margins = Some(z);
        warm = Some(warm_st);
        last = Some(st);
        pr = next_pr;
    }
    trace.outer_cap_reached = !trace.converged;
    trace.wall_time_s = start.elapsed().as_secs_f64();
    let st = last.expect("at least one outer iteration runs");
    let model = Model::from_state(&st, &kernel, cfg, &trace)?;
    Ok((model, trace))
}

/// A trained ramp-loss SVM.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kernel: KernelSpec,
    pub c: f64,
    pub s: f64,
    pub bias: f64,
    /// Training indices of the support vectors, ascending.
    pub support: Vec<usize>,
    /// `alpha_i = y_i (beta_i - mu_i)` per support vector.
    pub alpha: Vec<f64>,
    pub vectors: Vec<Vec<Feature>>,
    pub outer_iterations: usize,
    pub final_gap: f64,
    pub converged: bool,
}

const MODEL_HEADER: &str = "rampsvm-model v1";

impl Model {
    /// Model with support vectors `{i : alpha_i != 0}` of `st`.
    pub fn from_state(st: &SolverState, kernel: &KernelCache, cfg: &TrainConfig, trace: &CccpTrace) -> Result<Self> {
        let ds = kernel.dataset();
        let support: Vec<usize> = (0..st.len()).filter(|&i| st.alpha()[i] != 0.0).collect();
        Ok(Self {
            kernel: kernel.spec(),
            c: cfg.c,
            s: cfg.s,
            bias: st.bias(),
            alpha: support.iter().map(|&i| st.alpha()[i]).collect(),
            vectors: support.iter().map(|&i| ds.row(i).to_vec()).collect(),
            support,
            outer_iterations: trace.outer.len(),
            final_gap: trace.outer.last().map_or(f64::NAN, |o| o.final_gap),
            converged: trace.converged,
        })
    }

    pub fn n_sv(&self) -> usize {
        self.support.len()
    }

    /// `sum alpha_i K(x_i, x) + b`.
    pub fn decision_value(&self, x: &[Feature]) -> f64 {
        self.vectors.iter().zip(&self.alpha).map(|(v, &a)| a * self.kernel.eval(v, x)).sum::<f64>() + self.bias
    }

    /// Score and label; a zero score is labelled `+1`.
    pub fn predict(&self, x: &[Feature]) -> (f64, f64) {
        let score = self.decision_value(x);
        (score, if score >= 0.0 { 1.0 } else { -1.0 })
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Vec<(f64, f64)> {
        ds.rows().iter().map(|x| self.predict(x)).collect()
    }

    /// Fraction of samples whose predicted label matches.
    pub fn accuracy(&self, ds: &Dataset) -> f64 {
        let hits = self.predict_dataset(ds).iter().zip(ds.labels()).filter(|((_, l), &y)| *l == y).count();
        hits as f64 / ds.len() as f64
    }

    /// Serializes to the versioned text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_HEADER}");
        let _ = writeln!(out, "kernel {}", self.kernel);
        let _ = writeln!(out, "C {}", self.c);
        let _ = writeln!(out, "s {}", self.s);
        let _ = writeln!(out, "bias {}", self.bias);
        let _ = writeln!(out, "outer_iterations {}", self.outer_iterations);
        let _ = writeln!(out, "final_gap {}", self.final_gap);
        let _ = writeln!(out, "converged {}", self.converged);
        let _ = writeln!(out, "n_sv {}", self.n_sv());
        for ((&i, &a), v) in self.support.iter().zip(&self.alpha).zip(&self.vectors) {
            let _ = write!(out, "{i} {a}");
            for &(idx, val) in v {
                let _ = write!(out, " {idx}:{val}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |key: &str| -> Result<(usize, String)> {
            let (no, line) = lines.next().ok_or_else(|| Error::ModelFormat(format!("missing `{key}` line")))?;
            if key.is_empty() {
                return Ok((no + 1, line.to_string()));
            }
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| Error::ModelFormat(format!("line {}: expected `{key} ...`", no + 1)))?;
            Ok((no + 1, rest.to_string()))
        };
        let (_, header) = next("")?;
        if header != MODEL_HEADER {
            return Err(Error::ModelFormat(format!("unsupported header `{header}`")));
        }
        let (no, kernel) = next("kernel")?;
        let kernel = parse_kernel(&kernel).map_err(|e| Error::ModelFormat(format!("line {no}: {e}")))?;
        let c = parse_num::<f64>(next("C")?)?;
        let s = parse_num::<f64>(next("s")?)?;
        let bias = parse_num::<f64>(next("bias")?)?;
        let outer_iterations = parse_num::<usize>(next("outer_iterations")?)?;
        let final_gap = parse_num::<f64>(next("final_gap")?)?;
        let converged = parse_num::<bool>(next("converged")?)?;
        let n_sv = parse_num::<usize>(next("n_sv")?)?;
        let mut support = Vec::with_capacity(n_sv);
        let mut alpha = Vec::with_capacity(n_sv);
        let mut vectors = Vec::with_capacity(n_sv);
        for _ in 0..n_sv {
            let (no, line) = next("")?;
            let bad = |msg: &str| Error::ModelFormat(format!("line {no}: {msg}"));
            let mut parts = line.split_whitespace();
            let i = parts.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad index"))?;
            let a = parts.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad alpha"))?;
            let mut v = Vec::new();
            for tok in parts {
                let (idx, val) = tok.split_once(':').ok_or_else(|| bad("bad feature"))?;
                let idx: u32 = idx.parse().map_err(|_| bad("bad feature index"))?;
                let val: f64 = val.parse().map_err(|_| bad("bad feature value"))?;
                v.push((idx, val));
            }
            support.push(i);
            alpha.push(a);
            vectors.push(v);
        }
        if let Some((no, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::ModelFormat(format!("line {}: unexpected `{extra}`", no + 1)));
        }
        Ok(Self { kernel, c, s, bias, support, alpha, vectors, outer_iterations, final_gap, converged })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_kernel(text: &str) -> Result<KernelSpec> {
    let mut parts = text.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some("linear"), None, None) => Ok(KernelSpec::linear()),
        (Some("gaussian"), Some(k), None) => {
            let kappa = k.parse().map_err(|_| Error::ModelFormat(format!("bad kernel width `{k}`")))?;
            KernelSpec::gaussian(kappa)
        }
        _ => Err(Error::ModelFormat(format!("bad kernel `{text}`"))),
    }
}

fn parse_num<T: FromStr>((no, text): (usize, String)) -> Result<T> {
    text.trim().parse().map_err(|_| Error::ModelFormat(format!("line {no}: cannot parse `{text}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::make_synthetic;

    #[test]
    fn mu_rule_is_strict() {
        let ds = Dataset::new(vec![vec![(1, 1.0)]; 3], vec![1.0, 1.0, -1.0]).unwrap();
        let k = Arc::new(KernelCache::new(KernelSpec::linear(), Arc::new(ds), CacheConfig::default()).unwrap());
        let pr = build_problem(k, 2.0, vec![0.0; 3]).unwrap();
        // f_i = g_i + y_i + b; choose g so that margins are -0.5, 0, 1.5
        let st = SolverState::from_parts(vec![0.0; 3], vec![-1.5, -1.0, -0.5]);
        assert_eq!(margins(&st, &pr), vec![-0.5, 0.0, 1.5]);
        assert_eq!(compute_mu(&st, &pr, 0.0), vec![2.0, 0.0, 0.0]);
    }

    #[test]
    fn ramp_values() {
        assert_eq!(ramp_loss(0.0, 0.0), 1.0);
        assert_eq!(ramp_loss(-5.0, 0.0), 1.0);
        assert_eq!(ramp_loss(2.0, 0.0), 0.0);
        assert_eq!(ramp_loss(0.5, 0.0), 0.5);
        assert_eq!(ramp_loss(-5.0, -1.0), 2.0);
    }

    #[test]
    fn ramp_objective_at_zero_is_n_c() {
        let ds = make_synthetic(10, 0.0, 2.0, 0).unwrap();
        let k = Arc::new(KernelCache::new(KernelSpec::linear(), Arc::new(ds), CacheConfig::default()).unwrap());
        let pr = build_problem(k, 3.0, vec![0.0; 10]).unwrap();
        let st = SolverState::zeros(&pr);
        assert_eq!(ramp_objective(&st, &pr, 0.0), 30.0);
    }

    #[test]
    fn mode_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("fast".parse::<Mode>().is_err());
    }

    #[test]
    fn model_text_round_trip() {
        let ds = make_synthetic(30, 0.1, 2.0, 4).unwrap();
        let cfg = TrainConfig { kernel: KernelSpec::gaussian(0.5).unwrap(), ..Default::default() };
        let (model, _) = train(&ds, &cfg).unwrap();
        let back = Model::from_text(&model.to_text()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_text(), model.to_text());
    }

    #[test]
    fn rejects_positive_s() {
        let ds = make_synthetic(10, 0.0, 2.0, 0).unwrap();
        let cfg = TrainConfig { s: 0.5, ..Default::default() };
        assert!(train(&ds, &cfg).is_err());
    }
}
