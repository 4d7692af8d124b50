//! Hierarchical multi-task multi-fidelity Gaussian-process surrogates.
//!
//! Each task's response is split into a task-specific parametric trend and a
//! residual field that is learned jointly across tasks through a shared
//! Normal–inverse-Wishart hyperprior. Replicated measurements give per-point
//! intrinsic noise estimates, so sources of different precision are weighted
//! accordingly.
//!
//! The crate also contains the two comparison models (single-task stochastic
//! kriging and a homoscedastic multi-task model) and seeded generators for
//! the 1D and engine-surface style benchmarks.

pub mod baselines;
pub mod em;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod noise;
pub mod optim;
pub mod predict;
pub mod synth;
pub mod trend;
pub mod types;

pub use em::{e_step, m_step, penalized_objective, run_em, EmConfig, EmProblem, EmTrace, StopCriterion};
pub use error::{ModelError, Result};
pub use kernels::{composite_covariance, eval_kernel, gram, KernelConfig, KernelKind};
pub use noise::{build_noise_matrix, sample_variance, NoiseMatrix, NoisePolicy};
pub use predict::{predict, predict_mean, predict_variance, FittedModel, Prediction};
pub use trend::{fit_trend, iterate_model, OuterTrace, Regression, TrendConfig};
pub use types::{
    pool_designs, sample_means, DomainBox, Experiment, FidelitySpec, HyperParams, Location,
    Measurement, ModelState, PooledDesign, TaskDataset,
};

use nalgebra::DVector;

/// Fits the heteroscedastic multi-task model to an experiment: pools the
/// designs, estimates the intrinsic noise of every task under `policy` and
/// runs the trend/EM loop.
pub fn fit_hmtmf(
    experiment: &Experiment,
    hyper: &HyperParams,
    regression: Regression,
    policy: NoisePolicy,
) -> Result<(FittedModel, OuterTrace)> {
    experiment.validate()?;
    let kernel = KernelConfig::squared_exponential(hyper.delta_sq)?;
    let tau = types::default_tau_dup(&experiment.domain());
    let pooled = pool_designs(&experiment.tasks, tau)?;
    let noise = experiment
        .tasks
        .iter()
        .map(|t| build_noise_matrix(t, &experiment.fidelities, policy))
        .collect::<Result<Vec<_>>>()?;
    iterate_model(
        &experiment.tasks,
        &pooled,
        &kernel,
        hyper,
        &EmConfig::from_hyper(hyper),
        &TrendConfig::from_hyper(hyper, regression),
        &noise,
    )
}

/// Fits the homoscedastic multi-task baseline to an experiment: same trend
/// and EM loop as [`fit_hmtmf`], one learned noise level for every point.
/// Returns the model, the outer trace and the learned variance.
pub fn fit_egmtl(
    experiment: &Experiment,
    hyper: &HyperParams,
    regression: Regression,
) -> Result<(FittedModel, OuterTrace, f64)> {
    experiment.validate()?;
    let kernel = KernelConfig::squared_exponential(hyper.delta_sq)?;
    let tau = types::default_tau_dup(&experiment.domain());
    let pooled = pool_designs(&experiment.tasks, tau)?;
    baselines::homoscedastic_mtl_fit(
        &experiment.tasks,
        &pooled,
        &kernel,
        hyper,
        &EmConfig::from_hyper(hyper),
        &TrendConfig::from_hyper(hyper, regression),
    )
}

/// Sample means of every task, concatenated.
pub fn stacked_means(tasks: &[TaskDataset]) -> DVector<f64> {
    let v: Vec<f64> = tasks
        .iter()
        .flat_map(|t| sample_means(t).iter().copied().collect::<Vec<_>>())
        .collect();
    DVector::from_vec(v)
}
