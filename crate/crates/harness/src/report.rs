//! Report tables and files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentConfig, Method};
use crate::error::Result;
use crate::io::{write_json, write_text};
use crate::metrics::{delta_rmse, fmt17, mean_std};
use crate::run::Report;

const FAILED: &str = "failed";

/// Mean and standard deviation over replications; `None` marks a failed cell.
pub type Stat = Option<(f64, f64)>;

/// One row of the improvement table: a gauge pair (cell) against one
/// baseline, per task plus the task average.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaRow {
    pub baseline: Method,
    pub cell: usize,
    pub gauge_pair: Option<(f64, f64)>,
    pub per_task: Vec<(usize, Stat)>,
    pub average: Stat,
}

/// Task ids present in the report, ascending (the placeholder id 0 of a
/// failed instance is skipped).
pub fn task_ids(report: &Report) -> Vec<usize> {
    let ids: BTreeSet<usize> = report.records.iter().map(|r| r.task_id).filter(|&t| t > 0).collect();
    ids.into_iter().collect()
}

fn lookup(report: &Report, cell: usize, rep: usize, method: Method, task: usize) -> Option<f64> {
    report
        .records
        .iter()
        .find(|r| r.cell == cell && r.replication == rep && r.method == method && r.task_id == task)
        .and_then(|r| r.rmse)
}

/// Improvement of the hierarchical model over each baseline in the method
/// set, one block per baseline.
pub fn delta_table(report: &Report) -> Vec<DeltaRow> {
    let methods = report.config.method_set();
    if !methods.contains(&Method::Hmtmf) {
        return Vec::new();
    }
    let tasks = task_ids(report);
    let reps = report.config.n_replications;
    let mut rows = Vec::new();
    for baseline in methods.into_iter().filter(|&m| m != Method::Hmtmf) {
        for (cell, pair) in report.config.cells().into_iter().enumerate() {
            let deltas: Vec<Vec<Option<f64>>> = tasks
                .iter()
                .map(|&t| {
                    (0..reps)
                        .map(|r| {
                            let b = lookup(report, cell, r, baseline, t)?;
                            let h = lookup(report, cell, r, Method::Hmtmf, t)?;
                            delta_rmse(b, h).ok()
                        })
                        .collect()
                })
                .collect();
            let stat = |v: &[Option<f64>]| -> Stat {
                let ok: Option<Vec<f64>> = v.iter().copied().collect();
                ok.filter(|o| !o.is_empty()).map(|o| mean_std(&o))
            };
            let per_task = tasks.iter().zip(&deltas).map(|(&t, d)| (t, stat(d))).collect();
            let averages: Vec<Option<f64>> = (0..reps)
                .map(|r| {
                    let v: Option<Vec<f64>> = deltas.iter().map(|d| d[r]).collect();
                    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            rows.push(DeltaRow {
                baseline,
                cell,
                gauge_pair: pair,
                per_task,
                average: stat(&averages),
            });
        }
    }
    rows
}

fn pair_fields(pair: Option<(f64, f64)>) -> (String, String) {
    match pair {
        Some((h, l)) => (fmt17(h), fmt17(l)),
        None => (String::new(), String::new()),
    }
}

fn stat_fields(s: Stat) -> String {
    match s {
        Some((m, sd)) => format!("{},{}", fmt17(m), fmt17(sd)),
        None => format!("{FAILED},{FAILED}"),
    }
}

/// Improvement table as CSV: one block of rows per baseline, per-task mean
/// and standard deviation columns and the task average.
pub fn delta_csv(report: &Report) -> String {
    let tasks = task_ids(report);
    let mut out = String::from("baseline,p_high,p_low");
    for t in &tasks {
        out.push_str(&format!(",task{t}_mean,task{t}_std"));
    }
    out.push_str(",average_mean,average_std\n");
    for row in delta_table(report) {
        let (h, l) = pair_fields(row.gauge_pair);
        out.push_str(&format!("{},{h},{l}", row.baseline.label()));
        for (_, s) in &row.per_task {
            out.push(',');
            out.push_str(&stat_fields(*s));
        }
        out.push(',');
        out.push_str(&stat_fields(row.average));
        out.push('\n');
    }
    out
}

/// Every record as CSV.
pub fn raw_csv(report: &Report) -> String {
    let mut out = String::from("cell,p_high,p_low,replication,seed,method,task_id,rmse,noise_variance,error\n");
    for r in &report.records {
        let (h, l) = pair_fields(r.gauge_pair);
        let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        let err = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        out.push_str(&format!(
            "{},{h},{l},{},{},{},{},{},{},\"{err}\"\n",
            r.cell,
            r.replication,
            r.seed,
            r.method.label(),
            r.task_id,
            opt(r.rmse),
            opt(r.noise_variance),
        ));
    }
    out
}

/// Mean and standard deviation of the RMSE per (cell, method, task).
pub fn rmse_csv(report: &Report) -> String {
    let mut out = String::from("p_high,p_low,method,task_id,rmse_mean,rmse_std,n_ok,n_failed\n");
    let tasks = task_ids(report);
    for (cell, pair) in report.config.cells().into_iter().enumerate() {
        for m in report.config.method_set() {
            for &t in &tasks {
                let recs: Vec<_> = report
                    .records
                    .iter()
                    .filter(|r| r.cell == cell && r.method == m && r.task_id == t)
                    .collect();
                let ok: Vec<f64> = recs.iter().filter_map(|r| r.rmse).collect();
                let (h, l) = pair_fields(pair);
                let stat = if ok.is_empty() {
                    format!("{FAILED},{FAILED}")
                } else {
                    let (mean, sd) = mean_std(&ok);
                    format!("{},{}", fmt17(mean), fmt17(sd))
                };
                out.push_str(&format!(
                    "{h},{l},{},{t},{stat},{},{}\n",
                    m.label(),
                    ok.len(),
                    recs.len() - ok.len()
                ));
            }
        }
    }
    out
}

fn curve_csv(curve: &crate::run::Curve) -> String {
    let mut out = String::from("x,truth");
    for s in &curve.series {
        let m = s.method.label();
        out.push_str(&format!(",{m}_mean,{m}_variance,{m}_lower,{m}_upper"));
    }
    out.push('\n');
    for i in 0..curve.x.len() {
        out.push_str(&format!("{},{}", fmt17(curve.x[i]), fmt17(curve.truth[i])));
        for s in &curve.series {
            let (m, v) = (s.mean[i], s.variance[i]);
            let sd = v.max(0.0).sqrt();
            out.push_str(&format!(
                ",{},{},{},{}",
                fmt17(m),
                fmt17(v),
                fmt17(m - 2.0 * sd),
                fmt17(m + 2.0 * sd)
            ));
        }
        out.push('\n');
    }
    out
}

fn tuning_csv(report: &Report) -> String {
    let mut out = String::from("cell,replication,delta_sq,nu,lambda,score,error\n");
    let mut tuned = report.tuned.clone();
    tuned.sort_by_key(|t| (t.cell, t.replication));
    for t in &tuned {
        out.push_str(&format!(
            "{},{},{},{},{},{},\"{}\"\n",
            t.cell,
            t.replication,
            fmt17(t.delta_sq),
            fmt17(t.nu),
            fmt17(t.lambda),
            t.score.map(fmt17).unwrap_or_default(),
            t.error.as_deref().unwrap_or("").replace(['"', '\n'], " ")
        ));
    }
    out
}

#[derive(Serialize)]
struct Summary<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    seeds: Vec<u64>,
    n_records: usize,
    n_failed: usize,
    delta: Vec<DeltaRow>,
}

/// Writes `summary.json`, `delta.csv`, `rmse.csv`, `raw.csv`, `tuning.csv`
/// (when tuned) and `curves/c{cell}_r{rep}_task{id}.csv` under `dir`.
/// Contents depend only on the report, so equal reports give equal bytes.
pub fn write_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let p = dir.join(name);
        write_text(&p, &text)?;
        written.push(p);
        Ok(())
    };
    put("delta.csv".into(), delta_csv(report))?;
    put("rmse.csv".into(), rmse_csv(report))?;
    put("raw.csv".into(), raw_csv(report))?;
    if !report.tuned.is_empty() {
        put("tuning.csv".into(), tuning_csv(report))?;
    }
    for c in &report.curves {
        put(
            format!("curves/c{}_r{:03}_task{}.csv", c.cell, c.replication, c.task_id),
            curve_csv(c),
        )?;
    }
    let summary = Summary {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: &report.config,
        seeds: (0..report.config.n_replications)
            .map(|r| crate::data::replication_seed(report.config.seed, r))
            .collect(),
        n_records: report.records.len(),
        n_failed: report.n_failed(),
        delta: delta_table(report),
    };
    let p = dir.join("summary.json");
    write_json(&p, &summary)?;
    written.push(p);
    Ok(written)
}

/// Fixed-width text rendering of the improvement table for the console.
pub fn delta_text(report: &Report) -> String {
    let tasks = task_ids(report);
    let mut out = String::new();
    let mut current = None;
    for row in delta_table(report) {
        if current != Some(row.baseline) {
            current = Some(row.baseline);
            out.push_str(&format!("improvement over {} (%)\n{:>14}", row.baseline.label(), "pair"));
            for t in &tasks {
                out.push_str(&format!("{:>18}", format!("task {t}")));
            }
            out.push_str(&format!("{:>18}\n", "average"));
        }
        let label = row
            .gauge_pair
            .map(|(h, l)| format!("({h}, {l})"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!("{label:>14}"));
        let cell = |s: Stat| match s {
            Some((m, sd)) => format!("{m:>9.2} ± {sd:<6.2}"),
            None => format!("{FAILED:>18}"),
        };
        for (_, s) in &row.per_task {
            out.push_str(&cell(*s));
        }
        out.push_str(&cell(row.average));
        out.push('\n');
    }
    out
}
