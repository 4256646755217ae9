//! Experiment runner and acceptance suites for `predfilt-core`.

// `!(x >= 0.0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod runner;
pub mod suites;
pub mod trace;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind, PolicyKind};
pub use runner::{run, run_all, run_seed, RunError, SeedRun};
pub use trace::{Action, SeedSummary, StepRecord};
