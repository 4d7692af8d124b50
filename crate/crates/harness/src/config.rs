//! Experiment configuration.

use std::path::PathBuf;

use hmtmf::synth::{gauge_pairs_table, Bench1DConfig, EngineBenchConfig};
use hmtmf::{HyperParams, NoisePolicy, Regression};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::tune::TuneGrid;

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Hierarchical multi-task multi-fidelity model.
    Hmtmf,
    /// Multi-task model with one learned homoscedastic noise level.
    Egmtl,
    /// Independent stochastic kriging per task.
    Sk,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Hmtmf, Method::Egmtl, Method::Sk];

    pub fn label(self) -> &'static str {
        match self {
            Method::Hmtmf => "hmtmf",
            Method::Egmtl => "egmtl",
            Method::Sk => "sk",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Benchmark {
    OneD,
    Engine,
    /// A stored experiment plus a test set with true values.
    File { experiment: PathBuf, truth: PathBuf },
}

/// Model settings shared by the hierarchical model and the homoscedastic
/// baseline. SK uses only the noise policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub hyper: HyperParams,
    pub regression: Regression,
    pub policy: NoisePolicy,
}

impl FitSettings {
    /// Defaults for the 1D benchmark: three replicates per point, so noise
    /// comes from sample variances.
    pub fn one_d() -> Self {
        Self {
            hyper: HyperParams {
                delta_sq: 2.0,
                nu: 20.0,
                lambda: 0.3,
                ..Default::default()
            },
            regression: Regression::Gls,
            policy: NoisePolicy::SampleVarianceOnly,
        }
    }

    /// Defaults for the engine benchmark: single measurements with known
    /// gauge repeatability.
    pub fn engine() -> Self {
        Self {
            hyper: HyperParams {
                delta_sq: 600.0,
                nu: 50.0,
                lambda: 1.0,
                ..Default::default()
            },
            regression: Regression::HuberIrls,
            policy: NoisePolicy::DeclaredVarianceFallback,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub methods: Vec<Method>,
    /// `(p_high, p_low)` gauge pairs; used by the engine benchmark only.
    pub gauge_pairs: Vec<(f64, f64)>,
    pub n_replications: usize,
    /// Replication `r` uses seed `seed + r`.
    pub seed: u64,
    pub fit: FitSettings,
    /// Per-replication held-out hyperparameter search; `None` uses `fit`.
    pub tune: Option<TuneGrid>,
    /// Template for the 1D benchmark (its seed is replaced per replication).
    pub one_d: Bench1DConfig,
    /// Template for the engine benchmark (seed and gauge pair replaced).
    pub engine: EngineBenchConfig,
    /// Write per-task curve files (truth, mean and ±2 sd bands).
    pub curves: bool,
}

impl ExperimentConfig {
    pub fn one_d(seed: u64) -> Self {
        Self {
            benchmark: Benchmark::OneD,
            methods: Method::ALL.to_vec(),
            gauge_pairs: Vec::new(),
            n_replications: 10,
            seed,
            fit: FitSettings::one_d(),
            tune: None,
            one_d: Bench1DConfig::with_seed(seed),
            engine: EngineBenchConfig::default(),
            curves: true,
        }
    }

    pub fn engine(seed: u64) -> Self {
        Self {
            benchmark: Benchmark::Engine,
            methods: Method::ALL.to_vec(),
            gauge_pairs: gauge_pairs_table(),
            n_replications: 10,
            seed,
            fit: FitSettings::engine(),
            tune: None,
            one_d: Bench1DConfig::with_seed(seed),
            engine: EngineBenchConfig::default(),
            curves: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(HarnessError::Config("at least one method is required".into()));
        }
        if self.n_replications == 0 {
            return Err(HarnessError::Config("n_replications must be at least 1".into()));
        }
        if self.benchmark == Benchmark::Engine {
            if self.gauge_pairs.is_empty() {
                return Err(HarnessError::Config("engine benchmark needs a gauge pair".into()));
            }
            for &(h, l) in &self.gauge_pairs {
                if !(h > 0.0 && l > 0.0 && h.is_finite() && l.is_finite()) {
                    return Err(HarnessError::Config(format!("invalid gauge pair ({h}, {l})")));
                }
            }
            self.engine.validate()?;
        }
        if self.benchmark == Benchmark::OneD {
            self.one_d.validate()?;
        }
        if let Some(grid) = &self.tune {
            grid.validate()?;
        }
        self.fit.hyper.validate()?;
        Ok(())
    }

    /// Cells of the sweep: one per gauge pair (a single cell for the other
    /// benchmarks).
    pub fn cells(&self) -> Vec<Option<(f64, f64)>> {
        match self.benchmark {
            Benchmark::Engine => self.gauge_pairs.iter().copied().map(Some).collect(),
            _ => vec![None],
        }
    }

    /// Methods in canonical order without duplicates.
    pub fn method_set(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        m
    }
}
