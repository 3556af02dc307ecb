//! On-disk formats. Bump the matching constant whenever a column or field
//! changes meaning or position.

use std::path::Path;

use rampsvm::cccp::{OuterRecord, TracePoint};
use rampsvm::{CccpTrace, Dataset, Model, TrainConfig};
use serde::Serialize;

use crate::error::CliError;

pub const METRICS_SCHEMA: u32 = 1;
pub const TRAJECTORY_SCHEMA: u32 = 1;
pub const BENCH_SCHEMA: u32 = 1;

/// Writes through a temporary sibling so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(CliError::io(path))
}

#[derive(Debug, Serialize)]
pub struct DataSummary {
    pub source: String,
    pub n_samples: usize,
    pub n_features: u32,
    pub n_positive: usize,
}

impl DataSummary {
    pub fn new(source: String, ds: &Dataset) -> Self {
        Self {
            source,
            n_samples: ds.len(),
            n_features: ds.dim(),
            n_positive: ds.labels().iter().filter(|&&y| y > 0.0).count(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ScreenedFractions {
    /// Fixed by the dynamic rule in the last inner problem.
    pub dynamic: f64,
    /// Fixed by propagation at the start of the last inner problem.
    pub propagation: f64,
    /// What the dynamic rule screens at the returned solution.
    pub at_convergence: f64,
}

#[derive(Debug, Serialize)]
pub struct Metrics<'a> {
    pub schema_version: u32,
    pub trajectory_schema: u32,
    pub data: DataSummary,
    pub seed: u64,
    pub config: &'a TrainConfig,
    pub wall_time_s: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub outer_cap_reached: bool,
    pub final_gap: f64,
    pub sv_count: usize,
    pub bias: f64,
    pub training_accuracy: f64,
    pub screened_fraction: ScreenedFractions,
    pub outer: &'a [OuterRecord],
}

impl<'a> Metrics<'a> {
    pub fn new(
        data: DataSummary,
        seed: u64,
        config: &'a TrainConfig,
        model: &Model,
        trace: &'a CccpTrace,
        training_accuracy: f64,
    ) -> Self {
        let n = data.n_samples.max(1) as f64;
        let last = trace.outer.last();
        Self {
            schema_version: METRICS_SCHEMA,
            trajectory_schema: TRAJECTORY_SCHEMA,
            data,
            seed,
            config,
            wall_time_s: trace.wall_time_s,
            outer_iterations: trace.outer.len(),
            inner_iterations: trace.inner_iterations(),
            converged: trace.converged,
            outer_cap_reached: trace.outer_cap_reached,
            final_gap: model.final_gap,
            sv_count: model.n_sv(),
            bias: model.bias,
            training_accuracy,
            screened_fraction: ScreenedFractions {
                dynamic: last.map_or(0.0, |o| o.screened_dynamic as f64 / n),
                propagation: last.map_or(0.0, |o| o.screened_propagation as f64 / n),
                at_convergence: trace.final_screened_fraction(),
            },
            outer: &trace.outer,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TrajectoryRow {
    pub outer: usize,
    pub iteration: usize,
    pub gap: f64,
    pub bias: f64,
    pub screened_dynamic: usize,
    pub screened_propagation: usize,
    pub shrunk: usize,
    pub deferred: usize,
    pub active: usize,
    pub screened_fraction: f64,
    #[serde(rename = "final")]
    pub is_final: bool,
}

impl From<&TracePoint> for TrajectoryRow {
    fn from(p: &TracePoint) -> Self {
        let c = &p.checkpoint;
        Self {
            outer: p.outer,
            iteration: c.iteration,
            gap: c.gap,
            bias: c.bias,
            screened_dynamic: c.screened_dynamic,
            screened_propagation: c.screened_propagation,
            shrunk: c.shrunk,
            deferred: c.deferred,
            active: c.active,
            screened_fraction: c.screened_fraction,
            is_final: c.is_final,
        }
    }
}

pub fn trajectory_csv(trace: &CccpTrace) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if trace.trajectory.is_empty() {
        w.write_record(TRAJECTORY_HEADER)?;
    }
    for p in &trace.trajectory {
        w.serialize(TrajectoryRow::from(p))?;
    }
    w.into_inner().map_err(|e| CliError::Io { path: "trajectory.csv".into(), source: e.into_error() })
}

pub const TRAJECTORY_HEADER: [&str; 11] = [
    "outer",
    "iteration",
    "gap",
    "bias",
    "screened_dynamic",
    "screened_propagation",
    "shrunk",
    "deferred",
    "active",
    "screened_fraction",
    "final",
];

#[derive(Debug, Serialize)]
pub struct PredictionRow {
    pub index: usize,
    pub score: f64,
    pub label: i8,
    pub true_label: i8,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub dataset: String,
    pub n: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub kernel: &'static str,
    pub kappa: f64,
    pub mode: String,
    pub rep: usize,
    pub status: &'static str,
    pub wall_time_s: f64,
    pub screened_fraction_final: f64,
    pub sv_count: usize,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub final_gap: f64,
    pub converged: bool,
    pub trajectory: String,
    pub error: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trajectory_still_has_header() {
        let bytes = trajectory_csv(&CccpTrace::default()).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), format!("{}\n", TRAJECTORY_HEADER.join(",")));
    }
}
