use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rampsvm::{CacheConfig, KernelSpec, Mode, Schedule, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "rampsvm", version, about = "Ramp-loss SVM training with safe sample screening")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write model.txt, metrics.json and trajectory.csv.
    Train(TrainArgs),
    /// Score a dataset with a saved model and write predictions.csv.
    Predict(PredictArgs),
    /// Run a grid of datasets x C x gamma x modes and write bench.csv.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Linear,
    Rbf,
}

impl KernelArg {
    pub fn spec(self, gamma: f64) -> Result<KernelSpec, CliError> {
        match self {
            KernelArg::Linear => Ok(KernelSpec::linear()),
            KernelArg::Rbf => KernelSpec::gaussian(gamma).map_err(|e| CliError::Usage(e.to_string())),
        }
    }
}

/// `N[,FLIP[,SEP]]`: two Gaussian clusters with a share of flipped labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synthetic {
    pub n: usize,
    pub flip: f64,
    pub separation: f64,
}

impl Synthetic {
    pub fn name(&self) -> String {
        format!("synthetic-n{}-flip{}-sep{}", self.n, self.flip, self.separation)
    }
}

impl std::str::FromStr for Synthetic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.is_empty() || parts.len() > 3 {
            return Err(format!("expected N[,FLIP[,SEP]], got `{s}`"));
        }
        let n = parts[0].parse().map_err(|_| format!("bad sample count `{}`", parts[0]))?;
        let flip = match parts.get(1) {
            Some(p) => p.parse().map_err(|_| format!("bad flip fraction `{p}`"))?,
            None => 0.05,
        };
        let separation = match parts.get(2) {
            Some(p) => p.parse().map_err(|_| format!("bad separation `{p}`"))?,
            None => 2.0,
        };
        Ok(Synthetic { n, flip, separation })
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: rampsvm::Error| e.to_string())
}

/// Solver settings shared by `train` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value = "rbf")]
    pub kernel: KernelArg,
    /// Ramp parameter s (<= 0).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub s: f64,
    /// Inner-solver tolerance on the maximal KKT violation.
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    /// SMO iterations before the first screening/shrinking check.
    #[arg(long, default_value_t = 50)]
    pub screen_warmup: usize,
    /// SMO iterations between checks.
    #[arg(long, default_value_t = 10)]
    pub screen_every: usize,
    /// Gap at which shrink+safe stops screening and starts shrinking.
    #[arg(long, default_value_t = 1e-4)]
    pub handoff_gap: f64,
    /// Outer (CCCP) iteration cap.
    #[arg(long, default_value_t = 20)]
    pub max_outer: usize,
    /// SMO step cap per inner problem (default 200 n).
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Largest sample count for which the full kernel matrix is precomputed.
    #[arg(long, default_value_t = CacheConfig::default().full_threshold)]
    pub full_matrix_max: usize,
    /// Kernel rows kept by the LRU cache above that size.
    #[arg(long, default_value_t = CacheConfig::default().capacity_rows)]
    pub cache_rows: usize,
}

impl SolverArgs {
    pub fn config(&self, kernel: KernelSpec, c: f64, mode: Mode) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            kernel,
            c,
            s: self.s,
            mode,
            eps: self.eps,
            max_iter: self.max_iter,
            schedule: Schedule { warmup: self.screen_warmup, cadence: self.screen_every },
            handoff_gap: self.handoff_gap,
            max_outer: self.max_outer,
            cache: CacheConfig { full_threshold: self.full_matrix_max, capacity_rows: self.cache_rows },
            ..TrainConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.screen_every == 0 {
            return Err(CliError::Usage("--screen-every must be at least 1".into()));
        }
        if !(self.handoff_gap > 0.0) {
            return Err(CliError::Usage(format!("--handoff-gap must be positive, got {}", self.handoff_gap)));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// LIBSVM-format training file.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generated data instead of a file: N[,FLIP[,SEP]].
    #[arg(long)]
    pub synthetic: Option<Synthetic>,
    /// Keep a seeded random subset of this many samples.
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    /// Gaussian width kappa in exp(-kappa |x - z|^2).
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, value_parser = parse_mode, default_value = "safe")]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Expected kernel; an error is raised if the model was trained otherwise.
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// LIBSVM-format datasets (repeatable).
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Generated datasets N[,FLIP[,SEP]] (repeatable).
    #[arg(long)]
    pub synthetic: Vec<Synthetic>,
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long = "C", value_delimiter = ',', default_value = "1")]
    pub c: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub gamma: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "safe,shrink,shrink+safe,none")]
    pub mode: Vec<Mode>,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}
