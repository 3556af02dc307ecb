//! Python module `rampsvm`.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rampsvm::oracle::solve_cil_reference;
use rampsvm::solver::gap::compute_gap;
use rampsvm::{
    build_problem, make_synthetic, parse_libsvm, read_libsvm, solve, subsample, CacheConfig, CccpTrace, Dataset,
    Feature, KernelCache, KernelKind, KernelSpec, Mode, Model, SolverConfig, TrainConfig,
};

fn to_py(e: rampsvm::Error) -> PyErr {
    match e {
        rampsvm::Error::Io(e) => PyIOError::new_err(e.to_string()),
        rampsvm::Error::IndexOutOfRange { .. } => PyIndexError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn kernel_spec(kernel: &str, gamma: f64) -> rampsvm::Result<KernelSpec> {
    match kernel {
        "linear" => Ok(KernelSpec::linear()),
        "rbf" | "gaussian" => KernelSpec::gaussian(gamma),
        other => Err(rampsvm::Error::InvalidArgument(format!("unknown kernel `{other}`; use linear or rbf"))),
    }
}

fn kernel_name(spec: KernelSpec) -> &'static str {
    match spec.kind {
        KernelKind::Linear => "linear",
        KernelKind::Gaussian => "rbf",
    }
}

/// Sparse row from dense values; zeros are dropped.
fn sparse(row: &[f64]) -> Vec<Feature> {
    row.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (j as u32 + 1, v)).collect()
}

/// Accepts a `Dataset` or a list of dense rows.
fn rows_of(obj: &Bound<'_, PyAny>) -> PyResult<Vec<Vec<Feature>>> {
    if let Ok(ds) = obj.extract::<PyRef<'_, PyDataset>>() {
        return Ok(ds.inner.rows().to_vec());
    }
    let dense: Vec<Vec<f64>> = obj.extract()?;
    Ok(dense.iter().map(|r| sparse(r)).collect())
}

fn bound_name(b: rampsvm::Bound) -> &'static str {
    match b {
        rampsvm::Bound::Lower => "lower",
        rampsvm::Bound::Upper => "upper",
    }
}

/// Labelled samples. Labels `> 0` become `+1`, the rest `-1`.
#[pyclass(name = "Dataset", module = "rampsvm", frozen)]
struct PyDataset {
    inner: Arc<Dataset>,
}

impl PyDataset {
    fn wrap(ds: Dataset) -> Self {
        Self { inner: Arc::new(ds) }
    }
}

#[pymethods]
impl PyDataset {
    /// Dense rows (list of lists of floats) and labels.
    #[new]
    fn new(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> PyResult<Self> {
        let rows = rows.iter().map(|r| sparse(r)).collect();
        Dataset::new(rows, labels).map(Self::wrap).map_err(to_py)
    }

    /// Sparse rows as lists of `(index, value)` with 1-based indices.
    #[staticmethod]
    fn from_sparse(rows: Vec<Vec<(u32, f64)>>, labels: Vec<f64>) -> PyResult<Self> {
        Dataset::new(rows, labels).map(Self::wrap).map_err(to_py)
    }

    /// Parses LIBSVM-format text.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        parse_libsvm(text).map(Self::wrap).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        read_libsvm(path).map(Self::wrap).map_err(to_py)
    }

    /// Two Gaussian clusters with a fraction of flipped labels.
    #[staticmethod]
    #[pyo3(signature = (n, flip=0.05, separation=2.0, seed=0))]
    fn synthetic(n: usize, flip: f64, separation: f64, seed: u64) -> PyResult<Self> {
        make_synthetic(n, flip, separation, seed).map(Self::wrap).map_err(to_py)
    }

    #[pyo3(signature = (m, seed=0))]
    fn subsample(&self, m: usize, seed: u64) -> PyResult<Self> {
        subsample(&self.inner, m, seed).map(Self::wrap).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> u32 {
        self.inner.dim()
    }

    #[getter]
    fn labels(&self) -> Vec<f64> {
        self.inner.labels().to_vec()
    }

    fn row(&self, i: usize) -> PyResult<Vec<(u32, f64)>> {
        if i >= self.inner.len() {
            return Err(PyIndexError::new_err(format!("row {i} out of range for {} samples", self.inner.len())));
        }
        Ok(self.inner.row(i).to_vec())
    }

    fn to_libsvm(&self) -> String {
        self.inner.to_libsvm()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

/// A trained ramp-loss SVM.
#[pyclass(name = "Model", module = "rampsvm", frozen)]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Model::from_text(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Model::load(path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    /// Scores `f(x)` for a `Dataset` or dense rows.
    fn decision_function(&self, x: &Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
        Ok(rows_of(x)?.iter().map(|r| self.inner.decision_value(r)).collect())
    }

    /// Labels in `{-1, +1}`.
    fn predict(&self, x: &Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
        Ok(rows_of(x)?.iter().map(|r| self.inner.predict(r).1).collect())
    }

    fn accuracy(&self, data: &PyDataset) -> f64 {
        self.inner.accuracy(&data.inner)
    }

    #[getter]
    fn kernel(&self) -> &'static str {
        kernel_name(self.inner.kernel)
    }

    #[getter]
    fn gamma(&self) -> Option<f64> {
        (self.inner.kernel.kind == KernelKind::Gaussian).then_some(self.inner.kernel.kappa)
    }

    #[getter(C)]
    fn c(&self) -> f64 {
        self.inner.c
    }

    #[getter]
    fn s(&self) -> f64 {
        self.inner.s
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.inner.bias
    }

    #[getter]
    fn support(&self) -> Vec<usize> {
        self.inner.support.clone()
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.alpha.clone()
    }

    #[getter]
    fn n_sv(&self) -> usize {
        self.inner.n_sv()
    }

    #[getter]
    fn outer_iterations(&self) -> usize {
        self.inner.outer_iterations
    }

    #[getter]
    fn final_gap(&self) -> f64 {
        self.inner.final_gap
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kernel='{}', C={}, n_sv={}, bias={})",
            self.inner.kernel,
            self.inner.c,
            self.inner.n_sv(),
            self.inner.bias
        )
    }
}

/// Per-iteration record of a training run.
#[pyclass(name = "Trace", module = "rampsvm", frozen)]
struct PyTrace {
    inner: CccpTrace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn outer_iterations(&self) -> usize {
        self.inner.outer.len()
    }

    #[getter]
    fn inner_iterations(&self) -> usize {
        self.inner.inner_iterations()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn outer_cap_reached(&self) -> bool {
        self.inner.outer_cap_reached
    }

    #[getter]
    fn wall_time_s(&self) -> f64 {
        self.inner.wall_time_s
    }

    #[getter]
    fn final_screened_fraction(&self) -> f64 {
        self.inner.final_screened_fraction()
    }

    #[getter]
    fn ramp_objectives(&self) -> Vec<f64> {
        self.inner.outer.iter().map(|o| o.ramp_objective).collect()
    }

    /// Outer records and checkpoints as JSON.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Trains a ramp-loss SVM. `mode` is one of none, safe, shrink, shrink+safe.
#[pyfunction]
#[pyo3(signature = (
    data, *, kernel="rbf", gamma=0.5, C=1.0, s=0.0, mode="safe", eps=1e-8,
    max_iter=None, max_outer=20, propagation=true,
))]
#[allow(non_snake_case, clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    data: &PyDataset,
    kernel: &str,
    gamma: f64,
    C: f64,
    s: f64,
    mode: &str,
    eps: f64,
    max_iter: Option<usize>,
    max_outer: usize,
    propagation: bool,
) -> PyResult<(PyModel, PyTrace)> {
    let cfg = TrainConfig {
        kernel: kernel_spec(kernel, gamma).map_err(to_py)?,
        c: C,
        s,
        mode: mode.parse::<Mode>().map_err(to_py)?,
        eps,
        max_iter,
        max_outer,
        propagation,
        ..TrainConfig::default()
    };
    let ds = Arc::clone(&data.inner);
    let (model, trace) = py.detach(move || rampsvm::train(&ds, &cfg)).map_err(to_py)?;
    Ok((PyModel { inner: model }, PyTrace { inner: trace }))
}

fn problem(
    data: &PyDataset,
    mu: Option<Vec<f64>>,
    kernel: &str,
    gamma: f64,
    c: f64,
) -> rampsvm::Result<rampsvm::CilProblem> {
    let spec = kernel_spec(kernel, gamma)?;
    let cache = KernelCache::new(spec, Arc::clone(&data.inner), CacheConfig::default())?;
    let mu = mu.unwrap_or_else(|| vec![0.0; data.inner.len()]);
    build_problem(Arc::new(cache), c, mu)
}

/// Solves one convex inner problem with SMO. `mu` entries are 0 or C
/// (all zeros gives the hinge-loss SVM). Returns a dict with `alpha`,
/// `bias`, `gap`, `iterations` and `screened` as `(index, "lower"|"upper")`.
#[pyfunction]
#[pyo3(signature = (data, mu=None, *, kernel="rbf", gamma=0.5, C=1.0, eps=1e-8, screening=false, shrinking=false))]
#[allow(non_snake_case, clippy::too_many_arguments)]
fn solve_cil<'py>(
    py: Python<'py>,
    data: &PyDataset,
    mu: Option<Vec<f64>>,
    kernel: &str,
    gamma: f64,
    C: f64,
    eps: f64,
    screening: bool,
    shrinking: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let pr = problem(data, mu, kernel, gamma, C).map_err(to_py)?;
    let cfg = SolverConfig { eps, screening, shrinking, ..SolverConfig::default() };
    let (st, gap) = py
        .detach(|| {
            let st = solve(&pr, None, &cfg)?;
            let gap = compute_gap(&st, &pr)?;
            Ok((st, gap))
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("alpha", st.alpha().to_vec())?;
    out.set_item("bias", st.bias())?;
    out.set_item("gap", gap)?;
    out.set_item("iterations", st.iterations())?;
    out.set_item("max_iter_reached", st.max_iter_reached())?;
    let screened: Vec<(usize, &str)> = st.screened().map(|(i, b, _)| (i, bound_name(b))).collect();
    out.set_item("screened", screened)?;
    Ok(out)
}

/// Same problem as `solve_cil`, solved by the slow dense reference method.
/// Returns `(alpha, bias)`.
#[pyfunction]
#[pyo3(signature = (data, mu=None, *, kernel="rbf", gamma=0.5, C=1.0, tol=1e-10))]
#[allow(non_snake_case)]
fn solve_cil_reference_py(
    py: Python<'_>,
    data: &PyDataset,
    mu: Option<Vec<f64>>,
    kernel: &str,
    gamma: f64,
    C: f64,
    tol: f64,
) -> PyResult<(Vec<f64>, f64)> {
    let pr = problem(data, mu, kernel, gamma, C).map_err(to_py)?;
    py.detach(|| solve_cil_reference(&pr, tol)).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "rampsvm")]
fn rampsvm_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(solve_cil, m)?)?;
    let reference = wrap_pyfunction!(solve_cil_reference_py, m)?;
    m.add("solve_cil_reference", reference)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
