//! Ramp-loss support vector machines trained by the concave-convex procedure,
//! with an SMO inner solver and safe sample screening.
//!
//! ```no_run
//! use rampsvm::{make_synthetic, train, Mode, TrainConfig};
//!
//! let ds = make_synthetic(500, 0.05, 2.0, 7).unwrap();
//! let cfg = TrainConfig { mode: Mode::Safe, ..TrainConfig::default() };
//! let (model, trace) = train(&ds, &cfg).unwrap();
//! println!("{} support vectors after {} outer iterations", model.n_sv(), trace.outer.len());
//! ```

pub mod cccp;
pub mod dataio;
pub mod error;
pub mod kernel;
pub mod oracle;
pub(crate) mod rng;
pub mod screening;
pub mod solver;

pub use cccp::{train, train_with_kernel, CccpObserver, CccpTrace, Mode, Model, TrainConfig};
pub use dataio::{make_synthetic, parse_libsvm, read_libsvm, subsample, Dataset, Feature};
pub use error::{Error, Result};
pub use kernel::{CacheConfig, KernelCache, KernelKind, KernelSpec};
pub use screening::{Decision, PropagationBounds, Schedule, ScreeningReport};
pub use solver::problem::{build_problem, Bound, CilProblem};
pub use solver::state::{FixReason, Rule, SampleStatus, SolverState};
pub use solver::{solve, solve_with_observer, Checkpoint, SolveObserver, SolverConfig};
