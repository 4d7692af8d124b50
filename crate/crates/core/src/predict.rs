//! Posterior mean and variance measure of a fitted hierarchical model.
//!
//! Wherever the (unknown) extrinsic covariance is needed it is replaced by
//! the composite covariance from [`crate::kernels::composite_from_grams`],
//! both in the residual term and in the trend-estimation term.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::kernels::{composite_from_grams, gram, KernelConfig};
use crate::linalg::{factor_spd, SpdFactor};
use crate::noise::NoiseMatrix;
use crate::types::{basis_rows_to_matrix, Location, ModelState, PooledDesign};

/// Residual-variance values down to this are clamped to zero; anything more
/// negative is reported as an error.
pub const NEGATIVE_VARIANCE_TOLERANCE: f64 = 1e-10;

/// Training data of one task as stored with a fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFit {
    pub task_id: usize,
    pub locations: Vec<Location>,
    pub basis: Vec<Vec<f64>>,
    /// Noise diagonal used in the fit (floored).
    pub noise: NoiseMatrix,
    pub means: Vec<f64>,
}

/// A fitted model: everything needed to predict for any task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub kernel: KernelConfig,
    pub nu: f64,
    pub lambda: f64,
    pub jitter: f64,
    pub pooled: PooledDesign,
    pub tasks: Vec<TaskFit>,
    pub state: ModelState,
}

impl FittedModel {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_index(&self, task_id: usize) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.task_id == task_id)
            .ok_or(ModelError::UnknownTask(task_id))
    }
}

/// Predictions for one task at a set of query points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub task_id: usize,
    pub locations: Vec<Location>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub components: Option<PredictionComponents>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionComponents {
    pub trend: Vec<f64>,
    pub residual: Vec<f64>,
    pub variance_residual: Vec<f64>,
    pub variance_trend: Vec<f64>,
}

impl Prediction {
    /// Comma-separated table: location columns, mean, variance and, when
    /// present, the four components. 17 significant digits.
    pub fn to_csv(&self) -> String {
        let d = self.locations.first().map_or(0, Vec::len);
        let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
        header.push("mean".into());
        header.push("variance".into());
        if self.components.is_some() {
            for h in ["trend", "residual", "variance_residual", "variance_trend"] {
                header.push(h.into());
            }
        }
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..self.mean.len() {
            let mut row: Vec<String> = self.locations[i].iter().map(|v| format!("{v:.16e}")).collect();
            row.push(format!("{:.16e}", self.mean[i]));
            row.push(format!("{:.16e}", self.variance[i]));
            if let Some(c) = &self.components {
                for v in [c.trend[i], c.residual[i], c.variance_residual[i], c.variance_trend[i]] {
                    row.push(format!("{v:.16e}"));
                }
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn check_queries(model: &FittedModel, l: usize, x_u: &[Location], basis: &[Vec<f64>]) -> Result<()> {
    if x_u.len() != basis.len() {
        return Err(ModelError::DimensionMismatch {
            expected: x_u.len(),
            found: basis.len(),
            context: "query basis rows".into(),
        });
    }
    let p = model.state.beta_hat[l].len();
    if let Some(row) = basis.iter().find(|r| r.len() != p) {
        return Err(ModelError::DimensionMismatch {
            expected: p,
            found: row.len(),
            context: "query basis columns".into(),
        });
    }
    let d = model.pooled.points.first().map_or(0, Vec::len);
    if let Some(x) = x_u.iter().find(|x| x.len() != d) {
        return Err(ModelError::DimensionMismatch {
            expected: d,
            found: x.len(),
            context: "query location".into(),
        });
    }
    Ok(())
}

/// Trend and residual parts of the posterior mean,
/// `U_l(x_u)ᵀ β̂_l` and `Σᵢ (α̂_l)ᵢ κ(x_u, xᵢ)`.
fn mean_parts(
    model: &FittedModel,
    l: usize,
    x_u: &[Location],
    basis: &[Vec<f64>],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let u = basis_rows_to_matrix(basis);
    let trend = if x_u.is_empty() {
        DVector::zeros(0)
    } else {
        &u * &model.state.beta_hat[l]
    };
    let k = gram(&model.kernel, x_u, &model.pooled.points)?;
    let residual = k * &model.state.alpha_hat[l];
    Ok((trend, residual))
}

/// Posterior mean for task `task_id` at `x_u`, with `basis[i] = U_l(x_u[i])`.
pub fn predict_mean(
    model: &FittedModel,
    task_id: usize,
    x_u: &[Location],
    basis: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let l = model.task_index(task_id)?;
    check_queries(model, l, x_u, basis)?;
    let (t, r) = mean_parts(model, l, x_u, basis)?;
    Ok((t + r).iter().copied().collect())
}

/// Variance measure for task `task_id`: residual part over all tasks plus the
/// task-specific trend-estimation part. Returns `(total, residual, trend)`.
pub fn predict_variance(
    model: &FittedModel,
    task_id: usize,
    x_u: &[Location],
    basis: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let l = model.task_index(task_id)?;
    check_queries(model, l, x_u, basis)?;
    let q = x_u.len();
    if q == 0 {
        return Ok((vec![], vec![], vec![]));
    }
    let m = model.n_tasks() as f64;
    let nu = model.nu;
    let c_alpha = &model.state.c_alpha;
    let pooled = &model.pooled.points;
    let kern = &model.kernel;

    // every task's training rows, stacked, carry their own noise
    let stacked: Vec<Location> = model
        .tasks
        .iter()
        .flat_map(|t| t.locations.iter().cloned())
        .collect();
    let noise_all: Vec<f64> = model
        .tasks
        .iter()
        .flat_map(|t| t.noise.diag.iter().copied())
        .collect();

    let k_xs = gram(kern, pooled, &stacked)?;
    let k_xu = gram(kern, pooled, x_u)?;
    let k_ss = gram(kern, &stacked, &stacked)?;
    let k_su = gram(kern, &stacked, x_u)?;

    let mut sigma = composite_from_grams(c_alpha, &k_xs, &k_xs, &k_ss, m, nu);
    for (i, v) in noise_all.iter().enumerate() {
        sigma[(i, i)] += v;
    }
    let sf = factor_spd(&sigma)?;
    let cross = composite_from_grams(c_alpha, &k_xs, &k_xu, &k_su, m, nu);
    // prior variance at each query: diagonal of the composite at (x_u, x_u)
    let ck = c_alpha * &k_xu;
    let prior: Vec<f64> = (0..q)
        .map(|j| (m * k_xu.column(j).dot(&ck.column(j)) + nu) / (m + nu))
        .collect();
    let half = sf.half_solve_mat(&cross);
    let mut var_res = Vec::with_capacity(q);
    for j in 0..q {
        let v = prior[j] - half.column(j).norm_squared();
        let tol = NEGATIVE_VARIANCE_TOLERANCE * prior[j].abs().max(1.0);
        if v < -tol {
            return Err(ModelError::NegativeVariance { index: j, value: v });
        }
        var_res.push(v.max(0.0));
    }

    // trend-estimation term for task l
    let task = &model.tasks[l];
    let offset: usize = model.tasks[..l].iter().map(|t| t.locations.len()).sum();
    let nl = task.locations.len();
    let rows: Vec<usize> = (offset..offset + nl).collect();
    let sigma_l = DMatrix::from_fn(nl, nl, |i, j| sigma[(rows[i], rows[j])]);
    let cross_l = cross.rows(offset, nl).into_owned();
    let lf = factor_spd(&sigma_l)?;
    let u_l = basis_rows_to_matrix(&task.basis);
    let var_trend = trend_variance(&lf, &u_l, &cross_l, basis)?;

    let total = var_res.iter().zip(&var_trend).map(|(a, b)| a + b).collect();
    Ok((total, var_res, var_trend))
}

/// `ζᵀ (Uᵀ Σ⁻¹ U)⁻¹ ζ` with `ζ = u(x) − Uᵀ Σ⁻¹ s(x)` for each query column.
pub(crate) fn trend_variance(
    sigma: &SpdFactor,
    u: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    query_basis: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let p = u.ncols();
    let si_u = sigma.solve_mat(u);
    let info = u.transpose() * &si_u;
    let info_f = factor_spd(&info)?;
    // Uᵀ Σ⁻¹ s = (Σ⁻¹ U)ᵀ s
    let proj = si_u.transpose() * cross;
    let mut out = Vec::with_capacity(query_basis.len());
    for (j, row) in query_basis.iter().enumerate() {
        let zeta = DVector::from_fn(p, |k, _| row[k] - proj[(k, j)]);
        let v = zeta.dot(&info_f.solve_vec(&zeta));
        out.push(v.max(0.0));
    }
    Ok(out)
}

/// Mean and variance together, optionally with the component breakdown.
pub fn predict(
    model: &FittedModel,
    task_id: usize,
    x_u: &[Location],
    basis: &[Vec<f64>],
    with_components: bool,
) -> Result<Prediction> {
    let l = model.task_index(task_id)?;
    check_queries(model, l, x_u, basis)?;
    let (trend, residual) = mean_parts(model, l, x_u, basis)?;
    let (variance, var_res, var_trend) = predict_variance(model, task_id, x_u, basis)?;
    let mean = (&trend + &residual).iter().copied().collect();
    let components = with_components.then(|| PredictionComponents {
        trend: trend.iter().copied().collect(),
        residual: residual.iter().copied().collect(),
        variance_residual: var_res,
        variance_trend: var_trend,
    });
    Ok(Prediction {
        task_id,
        locations: x_u.to_vec(),
        mean,
        variance,
        components,
    })
}
