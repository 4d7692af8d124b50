//! Comparison models: single-task stochastic kriging (uses fidelity
//! information, no transfer between tasks) and a homoscedastic multi-task
//! model (transfer between tasks, no fidelity information).

pub mod homoscedastic;
pub mod sk;

pub use homoscedastic::homoscedastic_mtl_fit;
pub use sk::{sk_fit, sk_fit_fixed, sk_predict, SkModel, SkOptions};
