//! Experiment driver: reproducible reconstruction runs, sampling-efficiency
//! sweeps, and state-tomography cross-validation, all configured from a
//! single JSON file and emitting versioned CSV/JSON outputs.

pub mod config;
pub mod output;
pub mod run;

pub use config::{CoeffSelection, ExperimentConfig, Mode};
pub use run::{cmd_efficiency_curve, cmd_qst_histogram, cmd_reconstruct};
