//! Seeded generators for the two benchmark families: the three-task 1D
//! example and multi-task 2D engine-like surfaces measured by a pair of
//! gauges of different repeatability.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::types::{DomainBox, Experiment, FidelitySpec, Location, Measurement, TaskDataset};

pub const LOW_RES: &str = "low-res";
pub const HIGH_RES: &str = "high-res";

/// Trend and residual coefficients `(a, b, c)` of the three 1D tasks.
const EXTRA_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

pub const TRUTH_1D: [(f64, f64, f64); 3] = [(0.1, 0.1, 0.2), (5.0, -0.2, 0.4), (0.3, 0.3, 0.3)];

/// `y(x) = a + b x + sin(πx/5) + c sin(4πx/5)` for task index 0, 1 or 2.
pub fn truth_1d(task: usize, x: f64) -> f64 {
    let (a, b, c) = TRUTH_1D[task];
    a + b * x + (PI * x / 5.0).sin() + c * (4.0 * PI * x / 5.0).sin()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaugeAssignment {
    /// Each point independently picks a gauge with probability ½.
    Random,
    /// Points alternate low, high, low, …
    Alternate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bench1DConfig {
    pub n_points_per_task: usize,
    pub replicates: usize,
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub lower: f64,
    pub upper: f64,
    pub assignment: GaugeAssignment,
    /// Intervals with no measurements, per task.
    pub exclusions: Vec<Vec<(f64, f64)>>,
    /// Extra `(task index, location)` points appended after the random design.
    pub extra_points: Vec<(usize, f64)>,
    pub seed: u64,
}

impl Default for Bench1DConfig {
    fn default() -> Self {
        Self {
            n_points_per_task: 10,
            replicates: 3,
            sigma_low: 0.2,
            sigma_high: 0.05,
            lower: 0.0,
            upper: 20.0,
            assignment: GaugeAssignment::Random,
            exclusions: vec![vec![], vec![(0.0, 5.0)], vec![(7.0, 10.0)]],
            extra_points: Vec::new(),
            seed: 0,
        }
    }
}

impl Bench1DConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points_per_task == 0 || self.replicates == 0 {
            return Err(ModelError::InvalidParameter {
                name: "n_points_per_task/replicates",
                reason: "must be positive".into(),
            });
        }
        if !(self.lower < self.upper) {
            return Err(ModelError::InvalidParameter {
                name: "domain",
                reason: format!("empty interval [{}, {}]", self.lower, self.upper),
            });
        }
        if self.exclusions.len() > 3 {
            return Err(ModelError::InvalidParameter {
                name: "exclusions",
                reason: "at most one list per task".into(),
            });
        }
        let width = self.upper - self.lower;
        for list in &self.exclusions {
            let excluded: f64 = list
                .iter()
                .map(|&(a, b)| (b.min(self.upper) - a.max(self.lower)).max(0.0))
                .sum();
            if excluded >= width {
                return Err(ModelError::InvalidParameter {
                    name: "exclusions",
                    reason: "cover the whole domain".into(),
                });
            }
        }
        if let Some(&(t, _)) = self.extra_points.iter().find(|(t, _)| *t >= 3) {
            return Err(ModelError::UnknownTask(t));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bench1D {
    pub experiment: Experiment,
}

impl Bench1D {
    pub fn truth(&self, task: usize, x: f64) -> f64 {
        truth_1d(task, x)
    }
}

fn draw_gauge(rng: &mut ChaCha8Rng, assignment: GaugeAssignment, i: usize) -> bool {
    match assignment {
        GaugeAssignment::Random => rng.random::<f64>() < 0.5,
        GaugeAssignment::Alternate => i % 2 == 1,
    }
}

/// Three 1D tasks with replicated measurements from two gauges.
/// Task ids are 1, 2 and 3; the basis is `[1, x]`.
pub fn gen_1d_tasks(cfg: &Bench1DConfig) -> Result<Bench1D> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut extra_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EXTRA_STREAM);
    let low = Normal::new(0.0, cfg.sigma_low).expect("finite sigma");
    let high = Normal::new(0.0, cfg.sigma_high).expect("finite sigma");
    let domain = DomainBox::new(vec![cfg.lower], vec![cfg.upper])?;
    let excluded = |task: usize, x: f64| {
        cfg.exclusions
            .get(task)
            .is_some_and(|l| l.iter().any(|&(a, b)| x >= a && x <= b))
    };
    let mut tasks = Vec::with_capacity(3);
    for task in 0..3 {
        let mut xs = Vec::with_capacity(cfg.n_points_per_task);
        while xs.len() < cfg.n_points_per_task {
            let x = rng.random_range(cfg.lower..cfg.upper);
            if !excluded(task, x) {
                xs.push(x);
            }
        }
        let n_random = xs.len();
        xs.extend(cfg.extra_points.iter().filter(|p| p.0 == task).map(|p| p.1));
        let mut measurements = Vec::with_capacity(xs.len());
        for (i, &x) in xs.iter().enumerate() {
            // extra points draw from their own stream so the random design
            // and its noise are unchanged by them
            let rng = if i < n_random { &mut rng } else { &mut extra_rng };
            let is_high = draw_gauge(rng, cfg.assignment, i);
            let noise = if is_high { &high } else { &low };
            let y = truth_1d(task, x);
            let replicates = (0..cfg.replicates).map(|_| y + noise.sample(rng)).collect();
            measurements.push(Measurement {
                location: vec![x],
                replicates,
                fidelity_id: if is_high { HIGH_RES } else { LOW_RES }.into(),
            });
        }
        let basis = xs.iter().map(|&x| vec![1.0, x]).collect();
        tasks.push(TaskDataset::new(task + 1, domain.clone(), measurements, basis)?);
    }
    let fidelities = vec![
        FidelitySpec::new(LOW_RES, cfg.sigma_low, false)?,
        FidelitySpec::new(HIGH_RES, cfg.sigma_high, false)?,
    ];
    Ok(Bench1D {
        experiment: Experiment::new(fidelities, tasks)?,
    })
}

/// The nine `(p_high, p_low)` gauge pairs of the engine study, in percent of
/// mean surface height.
pub fn gauge_pairs_table() -> Vec<(f64, f64)> {
    vec![
        (0.1, 0.5),
        (0.1, 2.5),
        (0.1, 5.0),
        (0.1, 12.5),
        (0.5, 2.5),
        (0.5, 5.0),
        (0.5, 12.5),
        (2.5, 5.0),
        (2.5, 12.5),
    ]
}

/// Gauge standard deviation for a repeatability of `percent` % of the mean
/// surface height.
pub fn gauge_sigma(percent: f64, mean_height: f64) -> f64 {
    percent / 100.0 * mean_height
}

/// A smooth random field: random Fourier features approximating a sample
/// path of a zero-mean, unit-variance GP with kernel `exp(−‖r‖²/δ²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RffField {
    pub omega: Vec<Vec<f64>>,
    pub phase: Vec<f64>,
    pub weight: Vec<f64>,
}

impl RffField {
    pub fn sample(rng: &mut ChaCha8Rng, dim: usize, delta_sq: f64, features: usize) -> Self {
        let scale = (2.0 / delta_sq).sqrt();
        let omega = (0..features)
            .map(|_| {
                (0..dim)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let phase = (0..features).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let weight = (0..features).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self { omega, phase, weight }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let norm = (2.0 / self.weight.len() as f64).sqrt();
        let s: f64 = self
            .omega
            .iter()
            .zip(&self.phase)
            .zip(&self.weight)
            .map(|((w, b), a)| a * (w.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + b).cos())
            .sum();
        norm * s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineBenchConfig {
    pub n_tasks: usize,
    pub n_low: usize,
    pub n_high: usize,
    /// Approximate size of the prediction grid.
    pub n_test: usize,
    /// `(p_high, p_low)` repeatabilities in percent of mean height.
    pub gauge_pair: (f64, f64),
    pub mrr_correlation: f64,
    pub mean_height_scale: f64,
    pub replicates: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    /// Squared length-scale of the generating fields.
    pub field_delta_sq: f64,
    /// Standard deviation of the shared residual field.
    pub residual_std: f64,
    /// Per-task perturbation amplitude relative to the shared field.
    pub similarity: f64,
    /// All tasks draw their MRR from the same independent field (the same
    /// machining process); otherwise each task gets its own.
    pub shared_mrr_field: bool,
    /// Largest absolute surface slope of the per-task linear trends, in
    /// response units per unit length.
    pub max_slope: f64,
    pub features: usize,
    pub seed: u64,
}

impl Default for EngineBenchConfig {
    fn default() -> Self {
        Self {
            n_tasks: 3,
            n_low: 25,
            n_high: 25,
            n_test: 15_000,
            gauge_pair: (0.1, 0.5),
            mrr_correlation: 0.7,
            mean_height_scale: 20.0,
            replicates: 1,
            lower: [0.0, 0.0],
            upper: [100.0, 50.0],
            field_delta_sq: 600.0,
            residual_std: 2.0,
            similarity: 0.1,
            shared_mrr_field: true,
            max_slope: 0.01,
            features: 400,
            seed: 0,
        }
    }
}

impl EngineBenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| {
            Err(ModelError::InvalidParameter {
                name,
                reason: reason.into(),
            })
        };
        if self.n_tasks == 0 || self.n_low + self.n_high == 0 || self.replicates == 0 {
            return bad("n_tasks/n_low/n_high/replicates", "must be positive");
        }
        if !(self.mrr_correlation.abs() <= 1.0) {
            return bad("mrr_correlation", "must lie in [-1, 1]");
        }
        let (ph, pl) = self.gauge_pair;
        if !(ph >= 0.0 && pl >= 0.0) {
            return bad("gauge_pair", "repeatabilities must be non-negative");
        }
        if !(self.field_delta_sq > 0.0 && self.residual_std >= 0.0 && self.similarity >= 0.0) {
            return bad("field", "length-scale must be positive, amplitudes non-negative");
        }
        if self.features == 0 {
            return bad("features", "must be positive");
        }
        if self.lower.iter().zip(&self.upper).any(|(a, b)| !(a < b)) {
            return bad("domain", "lower must be below upper");
        }
        Ok(())
    }

    pub fn domain(&self) -> DomainBox {
        DomainBox::new(self.lower.to_vec(), self.upper.to_vec()).expect("validated box")
    }

    pub fn sigma_high(&self) -> f64 {
        gauge_sigma(self.gauge_pair.0, self.mean_height_scale)
    }

    pub fn sigma_low(&self) -> f64 {
        gauge_sigma(self.gauge_pair.1, self.mean_height_scale)
    }
}

/// Regular grid of roughly `n` points over a 2D box, row-major in `x₂`.
pub fn grid_2d(lower: [f64; 2], upper: [f64; 2], n: usize) -> Vec<Location> {
    let aspect = (upper[0] - lower[0]) / (upper[1] - lower[1]);
    let nx = ((n as f64 * aspect).sqrt().round() as usize).max(2);
    let ny = ((n as f64 / nx as f64).round() as usize).max(2);
    let mut pts = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let y = lower[1] + (upper[1] - lower[1]) * j as f64 / (ny - 1) as f64;
        for i in 0..nx {
            let x = lower[0] + (upper[0] - lower[0]) * i as f64 / (nx - 1) as f64;
            pts.push(vec![x, y]);
        }
    }
    pts
}

const REFERENCE_GRID: usize = 1800;

/// Ground truth of one engine-like task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineSurface {
    pub offset: f64,
    pub slope: [f64; 2],
    pub shared: RffField,
    pub own: RffField,
    pub residual_std: f64,
    pub similarity: f64,
    pub mrr_field: RffField,
    pub correlation: f64,
    /// Mean and standard deviation of the height over the reference grid.
    pub height_moments: (f64, f64),
    /// Projection of the independent field onto the standardized height,
    /// and the standard deviation left after removing it.
    pub mrr_projection: (f64, f64, f64),
}

impl EngineSurface {
    pub fn height(&self, x: &[f64]) -> f64 {
        let r = self.shared.eval(x) + self.similarity * self.own.eval(x);
        self.offset + self.slope[0] * x[0] + self.slope[1] * x[1] + self.residual_std * r
    }

    /// Material removal rate: a covariate whose correlation with the height
    /// over the reference grid equals the configured value.
    pub fn mrr(&self, x: &[f64]) -> f64 {
        let (hm, hs) = self.height_moments;
        let z = (self.height(x) - hm) / hs;
        let (proj, mean, sd) = self.mrr_projection;
        let w = (self.mrr_field.eval(x) - mean - proj * z) / sd;
        self.correlation * z + (1.0 - self.correlation * self.correlation).sqrt() * w
    }
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(f64::MIN_POSITIVE))
}

/// Truth of every task on a common evaluation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthGrid {
    pub locations: Vec<Location>,
    /// Heights per task, in task order.
    pub heights: Vec<Vec<f64>>,
    /// Basis rows `[1, MRR]` per task.
    pub basis: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineBench {
    pub experiment: Experiment,
    pub surfaces: Vec<EngineSurface>,
    pub truth: TruthGrid,
}

/// Evaluates every surface on a grid of about `n` points.
pub fn engine_truth_grid(surfaces: &[EngineSurface], cfg: &EngineBenchConfig, n: usize) -> TruthGrid {
    let locations = grid_2d(cfg.lower, cfg.upper, n);
    let heights = surfaces
        .iter()
        .map(|s| locations.iter().map(|x| s.height(x)).collect())
        .collect();
    let basis = surfaces
        .iter()
        .map(|s| locations.iter().map(|x| vec![1.0, s.mrr(x)]).collect())
        .collect();
    TruthGrid {
        locations,
        heights,
        basis,
    }
}

/// Draws the ground-truth surfaces of an engine benchmark.
pub fn gen_engine_surfaces(cfg: &EngineBenchConfig, rng: &mut ChaCha8Rng) -> Vec<EngineSurface> {
    let shared = RffField::sample(rng, 2, cfg.field_delta_sq, cfg.features);
    let shared_mrr = RffField::sample(rng, 2, cfg.field_delta_sq, cfg.features);
    let reference = grid_2d(cfg.lower, cfg.upper, REFERENCE_GRID);
    let centre = [
        0.5 * (cfg.lower[0] + cfg.upper[0]),
        0.5 * (cfg.lower[1] + cfg.upper[1]),
    ];
    (0..cfg.n_tasks)
        .map(|_| {
            let own = RffField::sample(rng, 2, cfg.field_delta_sq, cfg.features);
            let own_mrr = RffField::sample(rng, 2, cfg.field_delta_sq, cfg.features);
            let mrr_field = if cfg.shared_mrr_field {
                shared_mrr.clone()
            } else {
                own_mrr
            };
            let slope = [
                rng.random_range(-cfg.max_slope..=cfg.max_slope),
                rng.random_range(-cfg.max_slope..=cfg.max_slope),
            ];
            // mean height at the centre equals the configured scale
            let offset = cfg.mean_height_scale - slope[0] * centre[0] - slope[1] * centre[1];
            let mut s = EngineSurface {
                offset,
                slope,
                shared: shared.clone(),
                own,
                residual_std: cfg.residual_std,
                similarity: cfg.similarity,
                mrr_field,
                correlation: cfg.mrr_correlation,
                height_moments: (0.0, 1.0),
                mrr_projection: (0.0, 0.0, 1.0),
            };
            let h: Vec<f64> = reference.iter().map(|x| s.height(x)).collect();
            s.height_moments = moments(&h);
            let (hm, hs) = s.height_moments;
            let z: Vec<f64> = h.iter().map(|v| (v - hm) / hs).collect();
            let f: Vec<f64> = reference.iter().map(|x| s.mrr_field.eval(x)).collect();
            let (fm, _) = moments(&f);
            let proj = f.iter().zip(&z).map(|(a, b)| (a - fm) * b).sum::<f64>() / z.len() as f64;
            let rest: Vec<f64> = f.iter().zip(&z).map(|(a, b)| a - fm - proj * b).collect();
            let (_, sd) = moments(&rest);
            s.mrr_projection = (proj, fm, sd);
            s
        })
        .collect()
}

/// Engine-like multi-task benchmark: surfaces, noisy measurements from two
/// gauges (ids `high-res` and `low-res`, repeatability declared) and the truth on
/// a grid of about `n_test` points. Task ids are `1..=n_tasks`; the basis is
/// `[1, MRR]`.
pub fn gen_engine_tasks(cfg: &EngineBenchConfig) -> Result<EngineBench> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let surfaces = gen_engine_surfaces(cfg, &mut rng);
    let domain = cfg.domain();
    let (s_high, s_low) = (cfg.sigma_high(), cfg.sigma_low());
    let mut tasks = Vec::with_capacity(cfg.n_tasks);
    for (l, s) in surfaces.iter().enumerate() {
        let mut measurements = Vec::with_capacity(cfg.n_low + cfg.n_high);
        let mut basis = Vec::with_capacity(cfg.n_low + cfg.n_high);
        for k in 0..cfg.n_high + cfg.n_low {
            let (id, sigma) = if k < cfg.n_high {
                (HIGH_RES, s_high)
            } else {
                (LOW_RES, s_low)
            };
            let x = vec![
                rng.random_range(cfg.lower[0]..cfg.upper[0]),
                rng.random_range(cfg.lower[1]..cfg.upper[1]),
            ];
            let h = s.height(&x);
            let replicates = (0..cfg.replicates)
                .map(|_| h + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            basis.push(vec![1.0, s.mrr(&x)]);
            measurements.push(Measurement {
                location: x,
                replicates,
                fidelity_id: id.into(),
            });
        }
        tasks.push(TaskDataset::new(l + 1, domain.clone(), measurements, basis)?);
    }
    let fidelities = vec![
        FidelitySpec::new(HIGH_RES, s_high, true)?,
        FidelitySpec::new(LOW_RES, s_low, true)?,
    ];
    let truth = engine_truth_grid(&surfaces, cfg, cfg.n_test);
    Ok(EngineBench {
        experiment: Experiment::new(fidelities, tasks)?,
        surfaces,
        truth,
    })
}
