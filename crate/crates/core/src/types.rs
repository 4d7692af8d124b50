//! Data model shared by every stage of the pipeline: tasks, replicated
//! measurements, measurement sources, the pooled design and the fitted state.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::noise::NoiseMatrix;

/// A point in the input space.
pub type Location = Vec<f64>;

/// A measurement source (gauge) with a known or assumed repeatability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelitySpec {
    pub id: String,
    /// Intrinsic standard deviation in response units.
    pub sigma: f64,
    /// The repeatability was established beforehand (e.g. a gauge study), so
    /// it may stand in for replicate sample variances.
    #[serde(default)]
    pub declared_variance_known: bool,
}

impl FidelitySpec {
    pub fn new(id: impl Into<String>, sigma: f64, declared_variance_known: bool) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(ModelError::InvalidParameter {
                name: "sigma",
                reason: format!("must be finite and non-negative, got {sigma}"),
            });
        }
        Ok(Self {
            id: id.into(),
            sigma,
            declared_variance_known,
        })
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// Replicated responses at one location, all taken with the same source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub location: Location,
    pub replicates: Vec<f64>,
    pub fidelity_id: String,
}

impl Measurement {
    pub fn replicate_count(&self) -> usize {
        self.replicates.len()
    }

    /// Arithmetic mean of the replicates.
    pub fn mean(&self) -> f64 {
        self.replicates.iter().sum::<f64>() / self.replicates.len() as f64
    }
}

/// Axis-aligned box containing a task's inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(ModelError::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
                context: "domain bounds".into(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(ModelError::InvalidParameter {
                name: "domain",
                reason: "lower bound exceeds upper bound".into(),
            });
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn diagonal(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    /// Smallest box containing both `self` and `other`.
    pub fn union(&self, other: &DomainBox) -> DomainBox {
        DomainBox {
            lower: self.lower.iter().zip(&other.lower).map(|(a, b)| a.min(*b)).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a.max(*b)).collect(),
        }
    }
}

/// One task: design points with replicated responses and the trend basis
/// evaluated at each design point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_id: usize,
    pub domain: DomainBox,
    pub measurements: Vec<Measurement>,
    /// Basis row `U_l(x_i)` for each measurement. Column 0 is the constant.
    pub basis: Vec<Vec<f64>>,
}

impl TaskDataset {
    pub fn new(
        task_id: usize,
        domain: DomainBox,
        measurements: Vec<Measurement>,
        basis: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let task = Self {
            task_id,
            domain,
            measurements,
            basis,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.domain.dim();
        if self.measurements.is_empty() {
            return Err(ModelError::InvalidDataset(format!(
                "task {} has no measurements",
                self.task_id
            )));
        }
        if self.basis.len() != self.measurements.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.measurements.len(),
                found: self.basis.len(),
                context: format!("basis rows of task {}", self.task_id),
            });
        }
        let p = self.basis[0].len();
        if p == 0 {
            return Err(ModelError::InvalidDataset(format!(
                "task {} has an empty basis",
                self.task_id
            )));
        }
        for (i, (m, u)) in self.measurements.iter().zip(&self.basis).enumerate() {
            if m.location.len() != d {
                return Err(ModelError::DimensionMismatch {
                    expected: d,
                    found: m.location.len(),
                    context: format!("task {} point {i}", self.task_id),
                });
            }
            if m.replicates.is_empty() {
                return Err(ModelError::InvalidDataset(format!(
                    "task {} point {i} has no replicates",
                    self.task_id
                )));
            }
            if m.location.iter().chain(&m.replicates).chain(u).any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite("dataset values"));
            }
            if !self.domain.contains(&m.location) {
                return Err(ModelError::InvalidDataset(format!(
                    "task {} point {i} lies outside the task domain",
                    self.task_id
                )));
            }
            if u.len() != p {
                return Err(ModelError::DimensionMismatch {
                    expected: p,
                    found: u.len(),
                    context: format!("basis row {i} of task {}", self.task_id),
                });
            }
            if u[0] != 1.0 {
                return Err(ModelError::InvalidDataset(format!(
                    "task {} basis column 0 must be the constant 1",
                    self.task_id
                )));
            }
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.measurements.len()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn basis_dim(&self) -> usize {
        self.basis[0].len()
    }

    pub fn locations(&self) -> Vec<Location> {
        self.measurements.iter().map(|m| m.location.clone()).collect()
    }

    pub fn basis_matrix(&self) -> DMatrix<f64> {
        basis_rows_to_matrix(&self.basis)
    }
}

/// Stacks basis rows into an `n × p` matrix.
pub fn basis_rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
}

/// Sample mean of the replicates at every design point of a task.
pub fn sample_means(task: &TaskDataset) -> DVector<f64> {
    DVector::from_iterator(task.n_points(), task.measurements.iter().map(Measurement::mean))
}

/// All tasks of one study plus the table of measurement sources.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub fidelities: Vec<FidelitySpec>,
    pub tasks: Vec<TaskDataset>,
}

impl Experiment {
    pub fn new(fidelities: Vec<FidelitySpec>, tasks: Vec<TaskDataset>) -> Result<Self> {
        let e = Self { fidelities, tasks };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(ModelError::Empty("task list"));
        }
        let mut ids = HashSet::new();
        for f in &self.fidelities {
            if !ids.insert(f.id.as_str()) {
                return Err(ModelError::InvalidDataset(format!(
                    "duplicate fidelity id {:?}",
                    f.id
                )));
            }
            if !(f.sigma >= 0.0) || !f.sigma.is_finite() {
                return Err(ModelError::InvalidParameter {
                    name: "sigma",
                    reason: format!("fidelity {:?} has sigma {}", f.id, f.sigma),
                });
            }
        }
        let mut task_ids = HashSet::new();
        let d = self.tasks[0].dim();
        for t in &self.tasks {
            t.validate()?;
            if !task_ids.insert(t.task_id) {
                return Err(ModelError::InvalidDataset(format!(
                    "duplicate task id {}",
                    t.task_id
                )));
            }
            if t.dim() != d {
                return Err(ModelError::DimensionMismatch {
                    expected: d,
                    found: t.dim(),
                    context: format!("dimension of task {}", t.task_id),
                });
            }
            for m in &t.measurements {
                if !ids.contains(m.fidelity_id.as_str()) {
                    return Err(ModelError::UnknownFidelity(m.fidelity_id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn fidelity(&self, id: &str) -> Option<&FidelitySpec> {
        self.fidelities.iter().find(|f| f.id == id)
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_index(&self, task_id: usize) -> Option<usize> {
        self.tasks.iter().position(|t| t.task_id == task_id)
    }

    /// Bounding box of all task domains.
    pub fn domain(&self) -> DomainBox {
        let mut b = self.tasks[0].domain.clone();
        for t in &self.tasks[1..] {
            b = b.union(&t.domain);
        }
        b
    }
}

/// Deduplicated union of the design points of all tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledDesign {
    pub points: Vec<Location>,
    /// `index_maps[l][i]` is the pooled row of point `i` of task `l`.
    pub index_maps: Vec<Vec<usize>>,
    pub tau_dup: f64,
}

impl PooledDesign {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Default dedup tolerance: `1e-9` times the diagonal of the domain.
pub fn default_tau_dup(domain: &DomainBox) -> f64 {
    let diag = domain.diagonal();
    if diag > 0.0 {
        1e-9 * diag
    } else {
        1e-9
    }
}

/// Pools the design points of several tasks. Points closer than `tau_dup`
/// to an already pooled point are merged into it.
pub fn pool_designs(tasks: &[TaskDataset], tau_dup: f64) -> Result<PooledDesign> {
    let locations: Vec<Vec<Location>> = tasks.iter().map(TaskDataset::locations).collect();
    pool_locations(&locations, tau_dup)
}

/// [`pool_designs`] over raw location sets.
pub fn pool_locations(sets: &[Vec<Location>], tau_dup: f64) -> Result<PooledDesign> {
    if sets.is_empty() {
        return Err(ModelError::Empty("task list"));
    }
    if !(tau_dup > 0.0) {
        return Err(ModelError::InvalidParameter {
            name: "tau_dup",
            reason: format!("must be positive, got {tau_dup}"),
        });
    }
    let d = sets
        .iter()
        .flat_map(|s| s.first())
        .map(Vec::len)
        .next()
        .ok_or(ModelError::Empty("design points"))?;
    let mut points: Vec<Location> = Vec::new();
    let mut index_maps = Vec::with_capacity(sets.len());
    for (l, set) in sets.iter().enumerate() {
        let mut map = Vec::with_capacity(set.len());
        for x in set {
            if x.len() != d {
                return Err(ModelError::DimensionMismatch {
                    expected: d,
                    found: x.len(),
                    context: format!("design point of task index {l}"),
                });
            }
            let hit = points.iter().position(|p| distance(p, x) < tau_dup);
            let row = match hit {
                Some(row) => row,
                None => {
                    points.push(x.clone());
                    points.len() - 1
                }
            };
            map.push(row);
        }
        index_maps.push(map);
    }
    Ok(PooledDesign {
        points,
        index_maps,
        tau_dup,
    })
}

/// Hyperparameters of the hierarchical model and its fitting loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Squared length-scale of the base kernel.
    pub delta_sq: f64,
    /// Inverse-Wishart degrees of freedom.
    pub nu: f64,
    /// Precision scaling of the Normal part of the hyperprior.
    pub lambda: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub k1_max: usize,
    pub k2_max: usize,
    /// First rung of the jitter ladder, relative to the mean diagonal.
    pub jitter: f64,
    /// Relative diagonal loading of the base Gram matrix before it is
    /// inverted for the hyperprior scale.
    #[serde(default = "default_kernel_nugget")]
    pub kernel_nugget: f64,
}

pub const DEFAULT_KERNEL_NUGGET: f64 = 1e-8;

fn default_kernel_nugget() -> f64 {
    DEFAULT_KERNEL_NUGGET
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            delta_sq: 80.0,
            nu: 1.0,
            lambda: 0.001,
            t1: 1e-6,
            t2: 1e-6,
            t3: 1e-4,
            t4: 1e-4,
            k1_max: 200,
            k2_max: 5,
            jitter: crate::linalg::DEFAULT_RELATIVE_JITTER,
            kernel_nugget: DEFAULT_KERNEL_NUGGET,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("delta_sq", self.delta_sq),
            ("nu", self.nu),
            ("lambda", self.lambda),
            ("t1", self.t1),
            ("t2", self.t2),
            ("t3", self.t3),
            ("t4", self.t4),
            ("jitter", self.jitter),
            ("kernel_nugget", self.kernel_nugget),
        ];
        for (name, v) in reals {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::InvalidParameter {
                    name,
                    reason: format!("must be finite and positive, got {v}"),
                });
            }
        }
        if self.k1_max == 0 {
            return Err(ModelError::InvalidParameter {
                name: "k1_max",
                reason: "must be at least 1".into(),
            });
        }
        if self.k2_max == 0 {
            return Err(ModelError::InvalidParameter {
                name: "k2_max",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Fitted parameters of the hierarchical model over a pooled design of size n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub mu_alpha: DVector<f64>,
    pub c_alpha: DMatrix<f64>,
    pub alpha_hat: Vec<DVector<f64>>,
    pub c_alpha_l: Vec<DMatrix<f64>>,
    /// Trend coefficients per task; empty until a trend has been fitted.
    pub beta_hat: Vec<DVector<f64>>,
    pub sigma_eps: Vec<NoiseMatrix>,
}

impl ModelState {
    pub fn n_pooled(&self) -> usize {
        self.mu_alpha.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.alpha_hat.len()
    }

    /// Mean of the residual field at the pooled design, `κ μ_α`.
    pub fn implied_mean(&self, kappa: &DMatrix<f64>) -> DVector<f64> {
        kappa * &self.mu_alpha
    }

    /// Covariance of the residual field at the pooled design, `κ C_α κ`.
    pub fn implied_covariance(&self, kappa: &DMatrix<f64>) -> DMatrix<f64> {
        crate::linalg::symmetrize(&(kappa * &self.c_alpha * kappa))
    }
}
