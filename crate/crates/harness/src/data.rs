//! Benchmark instances: training experiment plus test set with true values.

use std::path::Path;

use hmtmf::synth::{gen_1d_tasks, gen_engine_tasks, truth_1d, Bench1DConfig, EngineBenchConfig};
use hmtmf::{Experiment, Location};
use serde::{Deserialize, Serialize};

use crate::config::{Benchmark, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::io::read_json;

/// Points of the dense 1D evaluation grid on the benchmark interval.
pub const ONE_D_GRID: usize = 401;

/// True responses of one task at test locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskTruth {
    pub task_id: usize,
    pub locations: Vec<Location>,
    /// Basis row `U_l(x)` at every location.
    pub basis: Vec<Vec<f64>>,
    /// Empty when the file is only used for queries.
    #[serde(default)]
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub tasks: Vec<TaskTruth>,
}

impl TestSet {
    pub fn validate(&self, experiment: &Experiment) -> Result<()> {
        for t in &self.tasks {
            if experiment.task_index(t.task_id).is_none() {
                return Err(HarnessError::Config(format!("test set names unknown task {}", t.task_id)));
            }
            if t.locations.len() != t.values.len() || t.basis.len() != t.values.len() {
                return Err(HarnessError::Config(format!(
                    "task {}: locations, basis and values differ in length",
                    t.task_id
                )));
            }
            if t.values.is_empty() {
                return Err(HarnessError::Empty("test set task"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub experiment: Experiment,
    pub test: TestSet,
}

/// Evenly spaced grid on `[lower, upper]`, endpoints included.
pub fn grid_1d(lower: f64, upper: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lower; n];
    }
    (0..n)
        .map(|i| lower + (upper - lower) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn one_d_instance(cfg: &Bench1DConfig) -> Result<Instance> {
    let bench = gen_1d_tasks(cfg)?;
    let xs = grid_1d(cfg.lower, cfg.upper, ONE_D_GRID);
    let tasks = bench
        .experiment
        .tasks
        .iter()
        .enumerate()
        .map(|(l, t)| TaskTruth {
            task_id: t.task_id,
            locations: xs.iter().map(|&x| vec![x]).collect(),
            basis: xs.iter().map(|&x| vec![1.0, x]).collect(),
            values: xs.iter().map(|&x| truth_1d(l, x)).collect(),
        })
        .collect();
    Ok(Instance {
        experiment: bench.experiment,
        test: TestSet { tasks },
    })
}

pub fn engine_instance(cfg: &EngineBenchConfig) -> Result<Instance> {
    let bench = gen_engine_tasks(cfg)?;
    let tasks = bench
        .experiment
        .tasks
        .iter()
        .enumerate()
        .map(|(l, t)| TaskTruth {
            task_id: t.task_id,
            locations: bench.truth.locations.clone(),
            basis: bench.truth.basis[l].clone(),
            values: bench.truth.heights[l].clone(),
        })
        .collect();
    Ok(Instance {
        experiment: bench.experiment,
        test: TestSet { tasks },
    })
}

pub fn file_instance(experiment: &Path, truth: &Path) -> Result<Instance> {
    let experiment: Experiment = read_json(experiment)?;
    experiment.validate()?;
    let test: TestSet = read_json(truth)?;
    test.validate(&experiment)?;
    Ok(Instance { experiment, test })
}

/// Instance for one cell and replication of a sweep.
pub fn build_instance(cfg: &ExperimentConfig, pair: Option<(f64, f64)>, replication: usize) -> Result<Instance> {
    let seed = replication_seed(cfg.seed, replication);
    match &cfg.benchmark {
        Benchmark::OneD => one_d_instance(&Bench1DConfig {
            seed,
            ..cfg.one_d.clone()
        }),
        Benchmark::Engine => {
            let gauge_pair = pair.ok_or_else(|| HarnessError::Config("engine cell without gauge pair".into()))?;
            engine_instance(&EngineBenchConfig {
                seed,
                gauge_pair,
                ..cfg.engine.clone()
            })
        }
        Benchmark::File { experiment, truth } => file_instance(experiment, truth),
    }
}

pub fn replication_seed(seed: u64, replication: usize) -> u64 {
    seed.wrapping_add(replication as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_d_test_set_matches_the_truth_functions() {
        let inst = one_d_instance(&Bench1DConfig::with_seed(4)).unwrap();
        assert_eq!(inst.test.tasks.len(), 3);
        let t2 = &inst.test.tasks[1];
        assert_eq!(t2.task_id, 2);
        assert_eq!(t2.values.len(), ONE_D_GRID);
        assert_eq!(t2.locations[0], vec![0.0]);
        assert_eq!(*t2.locations.last().unwrap(), vec![20.0]);
        assert!((t2.values[0] - 5.0).abs() < 1e-12);
        inst.test.validate(&inst.experiment).unwrap();
    }

    #[test]
    fn engine_test_set_has_one_basis_row_per_location() {
        let cfg = EngineBenchConfig {
            n_test: 300,
            seed: 2,
            ..Default::default()
        };
        let inst = engine_instance(&cfg).unwrap();
        for t in &inst.test.tasks {
            assert_eq!(t.basis.len(), t.locations.len());
            assert!(t.basis.iter().all(|b| b.len() == 2 && b[0] == 1.0));
        }
        inst.test.validate(&inst.experiment).unwrap();
    }

    #[test]
    fn grid_has_endpoints() {
        assert_eq!(grid_1d(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
    }
}
