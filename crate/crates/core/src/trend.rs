//! Task-specific global trends and the outer loop that alternates trend fits
//! with EM on the detrended residuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::em::{noise_floor_for, run_em, EmConfig, EmProblem, EmTrace};
use crate::error::{ModelError, Result};
use crate::kernels::{gram_sym, KernelConfig};
use crate::linalg::{regularize_spd, select_rows};
use crate::noise::NoiseMatrix;
use crate::predict::{FittedModel, TaskFit};
use crate::types::{sample_means, HyperParams, Location, ModelState, PooledDesign, TaskDataset};

/// Consistency constant turning the median absolute residual into a scale
/// estimate under Gaussian errors.
const MAD_TO_SIGMA: f64 = 0.6745;
const IRLS_MAX_ITER: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regression {
    Ols,
    HuberIrls,
    /// Generalized least squares under the current model: after the first
    /// outer iteration `β_l` is fitted to `z̄_l − κ_l μ_α` with covariance
    /// `Σ_l` (composite block plus noise). The first iteration uses OLS.
    Gls,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendConfig {
    pub regression: Regression,
    pub huber_c: f64,
    pub t3: f64,
    pub t4: f64,
    pub k2_max: usize,
    /// Restart EM from the prior at every outer iteration instead of from the
    /// previous `(μ_α, C_α)`.
    #[serde(default)]
    pub cold_start: bool,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self::from_hyper(&HyperParams::default(), Regression::Ols)
    }
}

impl TrendConfig {
    pub fn from_hyper(h: &HyperParams, regression: Regression) -> Self {
        Self {
            regression,
            huber_c: 1.345,
            t3: h.t3,
            t4: h.t4,
            k2_max: h.k2_max,
            cold_start: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.huber_c > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "huber_c",
                reason: format!("must be positive, got {}", self.huber_c),
            });
        }
        if !(self.t3 > 0.0) || !(self.t4 > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "t3/t4",
                reason: "thresholds must be positive".into(),
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

/// Indices of basis columns that are (numerically) linear combinations of
/// the preceding columns.
fn dependent_columns(u: &DMatrix<f64>) -> Vec<usize> {
    let r = u.clone().qr().r();
    let p = u.ncols();
    let scale = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    (0..p)
        .filter(|&j| r[(j, j)].abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE))
        .collect()
}

fn least_squares(u: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = u.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| ModelError::RankDeficientBasis {
            columns: dependent_columns(u),
        })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fits trend coefficients `β` with `U β ≈ y`.
///
/// `HuberIrls` starts from the least-squares fit and iterates weighted least
/// squares with Huber weights `min(1, c s / |r|)`, where the scale `s` is
/// re-estimated each pass as `median |r| / 0.6745`.
pub fn fit_trend(u: &DMatrix<f64>, y: &DVector<f64>, cfg: &TrendConfig) -> Result<DVector<f64>> {
    let (n, p) = u.shape();
    if y.len() != n {
        return Err(ModelError::DimensionMismatch {
            expected: n,
            found: y.len(),
            context: "trend targets".into(),
        });
    }
    if p == 0 || n < p {
        return Err(ModelError::InvalidParameter {
            name: "basis",
            reason: format!("need at least as many points ({n}) as basis columns ({p}) and p >= 1"),
        });
    }
    let dependent = dependent_columns(u);
    if !dependent.is_empty() {
        return Err(ModelError::RankDeficientBasis { columns: dependent });
    }
    let mut beta = least_squares(u, y)?;
    if cfg.regression != Regression::HuberIrls {
        return Ok(beta);
    }
    let y_scale = y.amax() + 1.0;
    for _ in 0..IRLS_MAX_ITER {
        let r = y - u * &beta;
        let s = median(r.iter().map(|v| v.abs()).collect()) / MAD_TO_SIGMA;
        if s <= 1e-12 * y_scale {
            break;
        }
        let cut = cfg.huber_c * s;
        let sw: Vec<f64> = r
            .iter()
            .map(|ri| if ri.abs() <= cut { 1.0 } else { (cut / ri.abs()).sqrt() })
            .collect();
        let uw = DMatrix::from_fn(n, p, |i, j| u[(i, j)] * sw[i]);
        let yw = DVector::from_fn(n, |i, _| y[i] * sw[i]);
        let next = least_squares(&uw, &yw)?;
        let step = (&next - &beta).norm();
        beta = next;
        if step <= 1e-12 * (beta.norm() + 1.0) {
            break;
        }
    }
    Ok(beta)
}

/// Generalized least squares `(Uᵀ Σ⁻¹ U)⁻¹ Uᵀ Σ⁻¹ y`.
pub fn gls_trend(u: &DMatrix<f64>, y: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    let dependent = dependent_columns(u);
    if !dependent.is_empty() {
        return Err(ModelError::RankDeficientBasis { columns: dependent });
    }
    let f = crate::linalg::factor_spd(sigma)?;
    let si_u = f.solve_mat(u);
    let info = u.transpose() * &si_u;
    let rhs = si_u.transpose() * y;
    Ok(crate::linalg::factor_spd(&info)?.solve_vec(&rhs))
}

/// GLS trend of task `l` under the fitted state: target `z̄_l − κ_l μ_α`,
/// covariance `[m κ_l C_α κ_lᵀ + ν κ_ll] / (m + ν) + Σ_ε,l`.
fn model_gls_trend(
    kappa_l: &DMatrix<f64>,
    rows: &[usize],
    kappa: &DMatrix<f64>,
    state: &ModelState,
    noise: &NoiseMatrix,
    nu: f64,
    u: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = state.alpha_hat.len() as f64;
    let k_ll = DMatrix::from_fn(rows.len(), rows.len(), |i, j| kappa[(rows[i], rows[j])]);
    let kt = kappa_l.transpose();
    let mut sigma = crate::kernels::composite_from_grams(&state.c_alpha, &kt, &kt, &k_ll, m, nu);
    for (i, v) in noise.diag.iter().enumerate() {
        sigma[(i, i)] += v;
    }
    let y = z - kappa_l * &state.mu_alpha;
    gls_trend(u, &y, &crate::linalg::symmetrize(&sigma))
}

/// Why the outer loop stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterStop {
    /// Every task's `‖Δβ̂_l‖ < t3 (‖β̂_l‖ + 1)`.
    PerTaskBeta,
    /// Mean `‖Δβ̂_l‖ < t4 (mean ‖β̂_l‖ + 1)`.
    MeanBeta,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterIteration {
    pub iteration: usize,
    /// `‖β̂_l^j − β̂_l^{j−1}‖` per task; empty on the first iteration.
    pub delta_beta: Vec<f64>,
    pub mean_delta_beta: f64,
    /// EM iterations run in this outer iteration (0 when the loop stopped on
    /// the trend refit).
    pub em_iterations: usize,
    /// Homoscedastic noise variance used in this iteration, when learned.
    pub noise_variance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterTrace {
    pub iterations: Vec<OuterIteration>,
    pub stop: OuterStop,
    pub em_traces: Vec<EmTrace>,
}

impl OuterTrace {
    /// Number of completed trend-then-EM passes.
    pub fn em_passes(&self) -> usize {
        self.em_traces.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,mean_delta_beta,em_iterations,noise_variance,delta_beta\n");
        for it in &self.iterations {
            let deltas: Vec<String> = it.delta_beta.iter().map(|d| format!("{d:.16e}")).collect();
            out.push_str(&format!(
                "{},{:.16e},{},{},{}\n",
                it.iteration,
                it.mean_delta_beta,
                it.em_iterations,
                it.noise_variance.map_or(String::new(), |v| format!("{v:.16e}")),
                deltas.join(";")
            ));
        }
        out
    }
}

/// What a noise provider sees before each EM pass.
pub struct NoiseContext<'a> {
    pub outer_iteration: usize,
    pub pooled: &'a PooledDesign,
    pub kernel: &'a KernelConfig,
    pub kappa: &'a DMatrix<f64>,
    pub residuals: &'a [DVector<f64>],
    /// State from the previous outer iteration, if any.
    pub previous: Option<&'a ModelState>,
    pub nu: f64,
    pub jitter: f64,
    pub noise_floor: f64,
    /// Sample variance of all task means (1 when they are constant).
    pub response_variance: f64,
}

/// Supplies the per-task intrinsic noise matrices for an EM pass.
pub trait NoiseProvider {
    fn noise(&mut self, ctx: &NoiseContext<'_>) -> Result<Vec<NoiseMatrix>>;

    /// Scalar variance reported in the trace, for learned homoscedastic noise.
    fn reported_variance(&self) -> Option<f64> {
        None
    }
}

/// Fixed, pre-estimated noise matrices (the heteroscedastic model).
pub struct FixedNoise(pub Vec<NoiseMatrix>);

impl NoiseProvider for FixedNoise {
    fn noise(&mut self, _ctx: &NoiseContext<'_>) -> Result<Vec<NoiseMatrix>> {
        Ok(self.0.clone())
    }
}

/// Alternates trend fits and EM until the trend coefficients settle.
///
/// The residual field starts at zero. Iteration `j` fits `β̂^j` to
/// `Z̄_l − η̂_l^{j−1}` and then runs EM on `Z̄_l − U_l β̂^j`; `η̂_l^j` is the
/// fitted residual `κ_l α̂_l`. The loop stops when the refitted trend has
/// moved less than the thresholds, or after `k2_max` EM passes.
pub fn iterate_model(
    tasks: &[TaskDataset],
    pooled: &PooledDesign,
    kernel: &KernelConfig,
    hyper: &HyperParams,
    em_cfg: &EmConfig,
    trend_cfg: &TrendConfig,
    noise: &[NoiseMatrix],
) -> Result<(FittedModel, OuterTrace)> {
    if noise.len() != tasks.len() {
        return Err(ModelError::DimensionMismatch {
            expected: tasks.len(),
            found: noise.len(),
            context: "noise matrices per task".into(),
        });
    }
    fit_pipeline(
        tasks,
        pooled,
        kernel,
        hyper,
        em_cfg,
        trend_cfg,
        &mut FixedNoise(noise.to_vec()),
    )
}

/// [`iterate_model`] with a pluggable noise model.
pub fn fit_pipeline(
    tasks: &[TaskDataset],
    pooled: &PooledDesign,
    kernel: &KernelConfig,
    hyper: &HyperParams,
    em_cfg: &EmConfig,
    trend_cfg: &TrendConfig,
    provider: &mut dyn NoiseProvider,
) -> Result<(FittedModel, OuterTrace)> {
    hyper.validate()?;
    em_cfg.validate()?;
    trend_cfg.validate()?;
    if tasks.is_empty() {
        return Err(ModelError::Empty("task list"));
    }
    if pooled.index_maps.len() != tasks.len() {
        return Err(ModelError::DimensionMismatch {
            expected: tasks.len(),
            found: pooled.index_maps.len(),
            context: "pooled index maps".into(),
        });
    }
    let means: Vec<DVector<f64>> = tasks.iter().map(sample_means).collect();
    let bases: Vec<DMatrix<f64>> = tasks.iter().map(TaskDataset::basis_matrix).collect();
    let all_means: Vec<f64> = means.iter().flat_map(|v| v.iter().copied()).collect();
    let noise_floor = noise_floor_for(&all_means);

    let kappa = gram_sym(kernel, &pooled.points)?;
    let kappa_inv = regularize_spd(&kappa, hyper.kernel_nugget.max(hyper.jitter) * crate::linalg::diagonal_scale(&kappa))?.inverse();
    let kappa_rows: Vec<DMatrix<f64>> = pooled
        .index_maps
        .iter()
        .map(|rows| select_rows(&kappa, rows))
        .collect();

    let mut eta_prev: Vec<DVector<f64>> = means.iter().map(|v| DVector::zeros(v.len())).collect();
    let mut beta_prev: Option<Vec<DVector<f64>>> = None;
    let mut state: Option<ModelState> = None;
    let mut noise_used: Vec<NoiseMatrix> = Vec::new();
    let mut iterations = Vec::new();
    let mut em_traces = Vec::new();
    let mut stop = OuterStop::MaxIterations;

    for j in 1..=trend_cfg.k2_max {
        let betas = match (&state, trend_cfg.regression) {
            (Some(s), Regression::Gls) => (0..tasks.len())
                .map(|l| {
                    model_gls_trend(
                        &kappa_rows[l],
                        &pooled.index_maps[l],
                        &kappa,
                        s,
                        &noise_used[l].floored(noise_floor),
                        hyper.nu,
                        &bases[l],
                        &means[l],
                    )
                })
                .collect::<Result<Vec<_>>>()?,
            _ => means
                .iter()
                .zip(&eta_prev)
                .zip(&bases)
                .map(|((z, eta), u)| fit_trend(u, &(z - eta), trend_cfg))
                .collect::<Result<Vec<_>>>()?,
        };

        let (delta_beta, mean_delta_beta) = match &beta_prev {
            Some(prev) => {
                let d: Vec<f64> = betas.iter().zip(prev).map(|(b, p)| (b - p).norm()).collect();
                let mean = d.iter().sum::<f64>() / d.len() as f64;
                (d, mean)
            }
            None => (Vec::new(), f64::INFINITY),
        };
        if let Some(prev) = &beta_prev {
            let per_task = delta_beta
                .iter()
                .zip(prev)
                .all(|(d, b)| *d < trend_cfg.t3 * (b.norm() + 1.0));
            let mean_norm = prev.iter().map(|b| b.norm()).sum::<f64>() / prev.len() as f64;
            let mean_ok = mean_delta_beta < trend_cfg.t4 * (mean_norm + 1.0);
            if per_task || mean_ok {
                stop = if per_task {
                    OuterStop::PerTaskBeta
                } else {
                    OuterStop::MeanBeta
                };
                iterations.push(OuterIteration {
                    iteration: j,
                    delta_beta,
                    mean_delta_beta,
                    em_iterations: 0,
                    noise_variance: None,
                });
                break;
            }
        }

        let residuals: Vec<DVector<f64>> = means
            .iter()
            .zip(&bases)
            .zip(&betas)
            .map(|((z, u), b)| z - u * b)
            .collect();
        let ctx = NoiseContext {
            outer_iteration: j,
            pooled,
            kernel,
            kappa: &kappa,
            residuals: &residuals,
            previous: state.as_ref(),
            nu: hyper.nu,
            jitter: hyper.jitter,
            noise_floor,
            response_variance: noise_floor / crate::em::NOISE_FLOOR_FRACTION,
        };
        let noise = provider.noise(&ctx)?;
        if noise.len() != tasks.len() {
            return Err(ModelError::DimensionMismatch {
                expected: tasks.len(),
                found: noise.len(),
                context: "noise matrices from provider".into(),
            });
        }
        let problem = EmProblem::with_inverse(
            kappa.clone(),
            kappa_inv.clone(),
            pooled
                .index_maps
                .iter()
                .zip(&noise)
                .zip(&residuals)
                .map(|((rows, nm), r)| (rows.clone(), nm, r.clone()))
                .collect(),
            hyper.lambda,
            hyper.nu,
            noise_floor,
        )?;
        let init = if trend_cfg.cold_start { None } else { state.as_ref() };
        let (mut s, trace) = run_em(&problem, em_cfg, init)?;
        eta_prev = kappa_rows
            .iter()
            .zip(&s.alpha_hat)
            .map(|(k, a)| k * a)
            .collect();
        s.beta_hat = betas.clone();
        s.sigma_eps = noise.clone();
        iterations.push(OuterIteration {
            iteration: j,
            delta_beta,
            mean_delta_beta,
            em_iterations: trace.len(),
            noise_variance: provider.reported_variance(),
        });
        em_traces.push(trace);
        noise_used = noise;
        state = Some(s);
        beta_prev = Some(betas);
    }

    let state = state.expect("at least one EM pass runs before the loop can stop");
    let task_fits = tasks
        .iter()
        .zip(&noise_used)
        .zip(&means)
        .map(|((t, nm), z)| TaskFit {
            task_id: t.task_id,
            locations: t.locations(),
            basis: t.basis.clone(),
            noise: nm.floored(noise_floor),
            means: z.iter().copied().collect(),
        })
        .collect();
    let model = FittedModel {
        kernel: *kernel,
        nu: hyper.nu,
        lambda: hyper.lambda,
        jitter: hyper.jitter,
        pooled: pooled.clone(),
        tasks: task_fits,
        state,
    };
    Ok((
        model,
        OuterTrace {
            iterations,
            stop,
            em_traces,
        },
    ))
}

/// Fitted residual field at the training points of task `l`, `κ_l α̂_l`.
pub fn fitted_residuals(model: &FittedModel, task_index: usize) -> Result<DVector<f64>> {
    let rows = &model.pooled.index_maps[task_index];
    let locs: Vec<Location> = rows.iter().map(|&r| model.pooled.points[r].clone()).collect();
    let k = crate::kernels::gram(&model.kernel, &locs, &model.pooled.points)?;
    Ok(k * &model.state.alpha_hat[task_index])
}
