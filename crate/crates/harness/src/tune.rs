//! Hyperparameter selection on a held-out split of the training data.

use hmtmf::{sample_means, Experiment, HyperParams, TaskDataset};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FitSettings, Method};
use crate::data::{TaskTruth, TestSet};
use crate::error::{HarnessError, Result};
use crate::methods::fit_method;
use crate::metrics::rmse;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    /// `δ²` candidates as fractions of the squared domain diagonal.
    pub delta_sq_fractions: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Share of each task's points held out for scoring.
    pub holdout_fraction: f64,
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self {
            delta_sq_fractions: vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
            nu: vec![0.5, 1.0, 2.0, 5.0],
            lambda: vec![1e-4, 1e-3, 1e-2],
            holdout_fraction: 0.2,
        }
    }
}

impl TuneGrid {
    pub fn validate(&self) -> Result<()> {
        let lists = [&self.delta_sq_fractions, &self.nu, &self.lambda];
        if lists.iter().any(|l| l.is_empty()) {
            return Err(HarnessError::Config("tuning grid has an empty axis".into()));
        }
        if lists.iter().flat_map(|l| l.iter()).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(HarnessError::Config("tuning grid values must be positive".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(HarnessError::Config("holdout fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub delta_sq: f64,
    pub nu: f64,
    pub lambda: f64,
    /// Held-out RMSE; `None` when the fit failed.
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub hyper: HyperParams,
    pub score: f64,
    pub candidates: Vec<Candidate>,
}

/// Removes `⌊fraction · n_l⌋` random points from every task, keeping at least
/// `p + 1` points for a basis of dimension `p`. The held-out sample means
/// form the returned test set.
pub fn split_holdout(experiment: &Experiment, fraction: f64, seed: u64) -> Result<(Experiment, TestSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(experiment.tasks.len());
    let mut test = Vec::with_capacity(experiment.tasks.len());
    for task in &experiment.tasks {
        let n = task.n_points();
        let keep_min = task.basis_dim() + 1;
        let k = ((fraction * n as f64).floor() as usize).min(n.saturating_sub(keep_min));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut held = order[..k].to_vec();
        held.sort_unstable();
        let means = sample_means(task);
        let kept: Vec<usize> = (0..n).filter(|i| !held.contains(i)).collect();
        train.push(TaskDataset::new(
            task.task_id,
            task.domain.clone(),
            kept.iter().map(|&i| task.measurements[i].clone()).collect(),
            kept.iter().map(|&i| task.basis[i].clone()).collect(),
        )?);
        if !held.is_empty() {
            test.push(TaskTruth {
                task_id: task.task_id,
                locations: held.iter().map(|&i| task.measurements[i].location.clone()).collect(),
                basis: held.iter().map(|&i| task.basis[i].clone()).collect(),
                values: held.iter().map(|&i| means[i]).collect(),
            });
        }
    }
    if test.is_empty() {
        return Err(HarnessError::Config("too few points to hold any out".into()));
    }
    Ok((
        Experiment::new(experiment.fidelities.clone(), train)?,
        TestSet { tasks: test },
    ))
}

/// Held-out RMSE of the hierarchical model over all held-out points.
pub fn holdout_score(train: &Experiment, test: &TestSet, settings: &FitSettings) -> Result<f64> {
    let fitted = fit_method(Method::Hmtmf, train, settings)?;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for t in &test.tasks {
        pred.extend(fitted.predict_mean(t.task_id, &t.locations, &t.basis)?);
        truth.extend_from_slice(&t.values);
    }
    rmse(&pred, &truth)
}

/// Grid search over `(δ², ν, λ)`; ties go to the earliest candidate in
/// `δ²`-major order. The remaining settings are taken from `base`.
pub fn tune(experiment: &Experiment, base: &FitSettings, grid: &TuneGrid, seed: u64) -> Result<TuneResult> {
    grid.validate()?;
    let (train, test) = split_holdout(experiment, grid.holdout_fraction, seed)?;
    let diag_sq = experiment.domain().diagonal().powi(2);
    let mut combos = Vec::new();
    for &f in &grid.delta_sq_fractions {
        for &nu in &grid.nu {
            for &lambda in &grid.lambda {
                combos.push((f * diag_sq, nu, lambda));
            }
        }
    }
    let candidates: Vec<Candidate> = combos
        .par_iter()
        .map(|&(delta_sq, nu, lambda)| {
            let settings = FitSettings {
                hyper: HyperParams {
                    delta_sq,
                    nu,
                    lambda,
                    ..base.hyper.clone()
                },
                ..base.clone()
            };
            Candidate {
                delta_sq,
                nu,
                lambda,
                score: holdout_score(&train, &test, &settings).ok().filter(|s| s.is_finite()),
            }
        })
        .collect();
    let best = candidates
        .iter()
        .filter_map(|c| c.score.map(|s| (c, s)))
        .fold(None, |acc: Option<(&Candidate, f64)>, (c, s)| match acc {
            Some((_, bs)) if bs <= s => acc,
            _ => Some((c, s)),
        })
        .ok_or_else(|| HarnessError::Config("every tuning candidate failed".into()))?;
    Ok(TuneResult {
        hyper: HyperParams {
            delta_sq: best.0.delta_sq,
            nu: best.0.nu,
            lambda: best.0.lambda,
            ..base.hyper.clone()
        },
        score: best.1,
        candidates,
    })
}
