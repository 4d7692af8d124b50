//! Experiment harness for the hierarchical multi-task multi-fidelity model:
//! benchmark instances, a uniform interface over the three models, seeded
//! sweeps, hyperparameter tuning and report files.

pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod methods;
pub mod metrics;
pub mod report;
pub mod run;
pub mod tune;

pub use config::{Benchmark, ExperimentConfig, FitSettings, Method};
pub use data::{Instance, TaskTruth, TestSet};
pub use error::{HarnessError, Result};
pub use methods::{fit_method, FittedMethod};
pub use metrics::{delta_rmse, rmse};
pub use report::write_report;
pub use run::{run_experiment, Report};
pub use tune::{tune, TuneGrid};
