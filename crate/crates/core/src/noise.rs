//! Intrinsic (replication) noise: per-point sample variances and the
//! diagonal noise matrix of each task.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::types::{FidelitySpec, TaskDataset};

/// Diagonal of a task's intrinsic noise matrix; entry `i` is the variance of
/// the sample mean at design point `i`, i.e. `σ̂²ᵢ / nᵢ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseMatrix {
    pub diag: Vec<f64>,
}

impl NoiseMatrix {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if diag.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "noise diagonal",
                reason: "entries must be finite and non-negative".into(),
            });
        }
        Ok(Self { diag })
    }

    /// `σ² I` of size `n`.
    pub fn homoscedastic(n: usize, variance: f64) -> Result<Self> {
        Self::new(vec![variance; n])
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Copy with every entry raised to at least `floor`.
    pub fn floored(&self, floor: f64) -> NoiseMatrix {
        NoiseMatrix {
            diag: self.diag.iter().map(|v| v.max(floor)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePolicy {
    /// Every point needs at least two replicates.
    SampleVarianceOnly,
    /// Use the declared source variance for singletons and for sources whose
    /// repeatability is declared as known.
    DeclaredVarianceFallback,
}

/// Unbiased sample variance, `Σ (z − z̄)² / (n − 1)`.
///
/// Returns `None` for fewer than two replicates; the caller decides the
/// fallback.
pub fn sample_variance(replicates: &[f64]) -> Option<f64> {
    let n = replicates.len();
    if n < 2 {
        return None;
    }
    let mean = replicates.iter().sum::<f64>() / n as f64;
    let ss: f64 = replicates.iter().map(|z| (z - mean) * (z - mean)).sum();
    Some(ss / (n - 1) as f64)
}

/// Builds the noise matrix of one task under the given policy.
pub fn build_noise_matrix(
    task: &TaskDataset,
    fidelities: &[FidelitySpec],
    policy: NoisePolicy,
) -> Result<NoiseMatrix> {
    let mut diag = Vec::with_capacity(task.n_points());
    for (i, m) in task.measurements.iter().enumerate() {
        let n = m.replicate_count();
        let variance = match policy {
            NoisePolicy::SampleVarianceOnly => {
                sample_variance(&m.replicates).ok_or(ModelError::InsufficientReplicates {
                    task: task.task_id,
                    point: i,
                    replicates: n,
                })?
            }
            NoisePolicy::DeclaredVarianceFallback => {
                let fid = fidelities
                    .iter()
                    .find(|f| f.id == m.fidelity_id)
                    .ok_or_else(|| ModelError::UnknownFidelity(m.fidelity_id.clone()))?;
                match sample_variance(&m.replicates) {
                    Some(v) if !fid.declared_variance_known => v,
                    _ => fid.variance(),
                }
            }
        };
        diag.push(variance / n as f64);
    }
    NoiseMatrix::new(diag)
}
