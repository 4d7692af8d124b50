//! Sweep execution: every (cell, replication) job fits every method and
//! scores it on the test set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, FitSettings, Method};
use crate::data::{build_instance, replication_seed, Instance};
use crate::error::Result;
use crate::methods::{fit_method, FittedMethod};
use crate::metrics::rmse;
use crate::tune::tune;

/// One (cell, replication, method, task) result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: usize,
    pub gauge_pair: Option<(f64, f64)>,
    pub replication: usize,
    pub seed: u64,
    pub method: Method,
    /// 0 when the instance itself could not be built.
    pub task_id: usize,
    pub rmse: Option<f64>,
    pub noise_variance: Option<f64>,
    pub error: Option<String>,
}

/// Posterior mean and variance of one method along a 1D test grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub method: Method,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub cell: usize,
    pub replication: usize,
    pub task_id: usize,
    pub x: Vec<f64>,
    pub truth: Vec<f64>,
    pub series: Vec<CurveSeries>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedRecord {
    pub cell: usize,
    pub replication: usize,
    pub delta_sq: f64,
    pub nu: f64,
    pub lambda: f64,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    /// Sorted by (cell, replication, method, task).
    pub records: Vec<RunRecord>,
    pub curves: Vec<Curve>,
    pub tuned: Vec<TunedRecord>,
}

impl Report {
    pub fn n_failed(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }
}

#[derive(Default)]
struct JobOutput {
    records: Vec<RunRecord>,
    curves: Vec<Curve>,
    tuned: Option<TunedRecord>,
}

/// Runs the whole sweep. Jobs run in parallel; results are ordered by
/// (cell, replication, method, task) regardless of completion order. Failures
/// are recorded per record and never abort the sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let methods = cfg.method_set();
    let jobs: Vec<(usize, Option<(f64, f64)>, usize)> = cfg
        .cells()
        .into_iter()
        .enumerate()
        .flat_map(|(c, pair)| (0..cfg.n_replications).map(move |r| (c, pair, r)))
        .collect();
    let outputs: Vec<JobOutput> = jobs
        .par_iter()
        .map(|&(cell, pair, rep)| run_job(cfg, &methods, cell, pair, rep))
        .collect();
    let mut report = Report {
        config: cfg.clone(),
        records: Vec::new(),
        curves: Vec::new(),
        tuned: Vec::new(),
    };
    for out in outputs {
        report.records.extend(out.records);
        report.curves.extend(out.curves);
        report.tuned.extend(out.tuned);
    }
    report
        .records
        .sort_by_key(|r| (r.cell, r.replication, r.method, r.task_id));
    Ok(report)
}

fn run_job(
    cfg: &ExperimentConfig,
    methods: &[Method],
    cell: usize,
    pair: Option<(f64, f64)>,
    replication: usize,
) -> JobOutput {
    let seed = replication_seed(cfg.seed, replication);
    let base = RunRecord {
        cell,
        gauge_pair: pair,
        replication,
        seed,
        method: Method::Hmtmf,
        task_id: 0,
        rmse: None,
        noise_variance: None,
        error: None,
    };
    let instance = match build_instance(cfg, pair, replication) {
        Ok(i) => i,
        Err(e) => {
            let records = methods
                .iter()
                .map(|&method| RunRecord {
                    method,
                    error: Some(e.to_string()),
                    ..base.clone()
                })
                .collect();
            return JobOutput {
                records,
                ..Default::default()
            };
        }
    };
    let mut out = JobOutput::default();
    let settings = match &cfg.tune {
        Some(grid) => match tune(&instance.experiment, &cfg.fit, grid, seed) {
            Ok(t) => {
                out.tuned = Some(TunedRecord {
                    cell,
                    replication,
                    delta_sq: t.hyper.delta_sq,
                    nu: t.hyper.nu,
                    lambda: t.hyper.lambda,
                    score: Some(t.score),
                    error: None,
                });
                FitSettings {
                    hyper: t.hyper,
                    ..cfg.fit.clone()
                }
            }
            Err(e) => {
                out.tuned = Some(TunedRecord {
                    cell,
                    replication,
                    delta_sq: cfg.fit.hyper.delta_sq,
                    nu: cfg.fit.hyper.nu,
                    lambda: cfg.fit.hyper.lambda,
                    score: None,
                    error: Some(e.to_string()),
                });
                cfg.fit.clone()
            }
        },
        None => cfg.fit.clone(),
    };
    let fits: Vec<(Method, Result<FittedMethod>)> = methods
        .iter()
        .map(|&m| (m, fit_method(m, &instance.experiment, &settings)))
        .collect();
    for (method, fitted) in &fits {
        for t in &instance.test.tasks {
            let mut rec = RunRecord {
                method: *method,
                task_id: t.task_id,
                ..base.clone()
            };
            match fitted {
                Ok(f) => {
                    rec.noise_variance = f.noise_variance();
                    match f
                        .predict_mean(t.task_id, &t.locations, &t.basis)
                        .and_then(|p| rmse(&p, &t.values))
                    {
                        Ok(v) => rec.rmse = Some(v),
                        Err(e) => rec.error = Some(e.to_string()),
                    }
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            out.records.push(rec);
        }
    }
    if cfg.curves {
        out.curves = curves(&instance, &fits, cell, replication);
    }
    out
}

/// Curve data for 1D test sets; methods whose prediction fails are omitted.
fn curves(instance: &Instance, fits: &[(Method, Result<FittedMethod>)], cell: usize, replication: usize) -> Vec<Curve> {
    instance
        .test
        .tasks
        .iter()
        .filter(|t| t.locations.iter().all(|x| x.len() == 1))
        .map(|t| Curve {
            cell,
            replication,
            task_id: t.task_id,
            x: t.locations.iter().map(|x| x[0]).collect(),
            truth: t.values.clone(),
            series: fits
                .iter()
                .filter_map(|(m, f)| {
                    let p = f.as_ref().ok()?.predict(t.task_id, &t.locations, &t.basis).ok()?;
                    Some(CurveSeries {
                        method: *m,
                        mean: p.mean,
                        variance: p.variance,
                    })
                })
                .collect(),
        })
        .collect()
}
