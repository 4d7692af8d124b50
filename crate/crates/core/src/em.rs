//! Expectation–maximization for the hierarchical residual model.
//!
//! Each task's residuals are modelled as `η_l = κ_l α_l + ε_l` with
//! `α_l ~ N(μ_α, C_α)` shared across tasks and a Normal–inverse-Wishart
//! hyperprior on `(μ_α, C_α)` whose scale matrix is the inverse base kernel.
//! The E-step computes the Gaussian posterior of every `α_l`; the M-step
//! updates `(μ_α, C_α)` in closed form.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::linalg::{factor_spd, regularize_spd, select_rows, symmetrize, SpdFactor};
use crate::noise::NoiseMatrix;
use crate::types::{HyperParams, ModelState};

/// Noise entries are floored at this fraction of the response variance
/// before the noise matrix is inverted.
pub const NOISE_FLOOR_FRACTION: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCriterion {
    /// `‖Δμ_α‖ < t1 (‖μ_α‖ + 1)`
    MuAlphaDelta,
    /// `‖Δα̂_l‖ < t2 (‖α̂_l‖ + 1)` for every task.
    PerTaskAlphaDelta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub t1: f64,
    pub t2: f64,
    pub k1_max: usize,
    pub criterion: StopCriterion,
    /// Evaluate the penalized objective every iteration (costs one extra
    /// O(m n³) pass).
    pub trace_objective: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self::from_hyper(&HyperParams::default())
    }
}

impl EmConfig {
    pub fn from_hyper(h: &HyperParams) -> Self {
        Self {
            t1: h.t1,
            t2: h.t2,
            k1_max: h.k1_max,
            criterion: StopCriterion::MuAlphaDelta,
            trace_objective: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0) || !(self.t2 > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "t1/t2",
                reason: "thresholds must be positive".into(),
            });
        }
        if self.k1_max == 0 {
            return Err(ModelError::InvalidParameter {
                name: "k1_max",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmIteration {
    pub iteration: usize,
    /// Penalized objective at the parameters entering this iteration, when
    /// traced.
    pub objective: Option<f64>,
    pub delta_mu: f64,
    pub max_delta_alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub iterations: Vec<EmIteration>,
    pub stop: StopReason,
}

impl EmTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }

    /// Comma-separated table with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,objective,delta_mu,max_delta_alpha\n");
        for it in &self.iterations {
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e}\n",
                it.iteration,
                it.objective.map(|v| format!("{v:.16e}")).unwrap_or_default(),
                it.delta_mu,
                it.max_delta_alpha
            ));
        }
        out
    }
}

/// Residuals and noise of one task, positioned on the pooled design.
#[derive(Clone, Debug)]
pub struct EmTask {
    /// Pooled row of every task point.
    pub rows: Vec<usize>,
    /// `κ(X_l, X)`, `n_l × n`.
    pub kappa_l: DMatrix<f64>,
    /// Floored noise diagonal.
    pub noise: Vec<f64>,
    pub residuals: DVector<f64>,
}

/// Everything EM needs: base Gram matrix on the pooled design, its inverse,
/// per-task data and the hyperprior parameters.
#[derive(Clone, Debug)]
pub struct EmProblem {
    pub kappa: DMatrix<f64>,
    pub kappa_inv: DMatrix<f64>,
    pub tasks: Vec<EmTask>,
    pub lambda: f64,
    pub nu: f64,
}

impl EmProblem {
    /// `noise_floor` is applied to every noise entry; use
    /// [`noise_floor_for`] for the default.
    pub fn new(
        kappa: DMatrix<f64>,
        tasks: Vec<(Vec<usize>, &NoiseMatrix, DVector<f64>)>,
        lambda: f64,
        nu: f64,
        relative_jitter: f64,
        noise_floor: f64,
    ) -> Result<Self> {
        let kinv = regularize_spd(&kappa, relative_jitter * crate::linalg::diagonal_scale(&kappa))?
            .inverse();
        Self::with_inverse(kappa, kinv, tasks, lambda, nu, noise_floor)
    }

    /// Like [`EmProblem::new`] with a precomputed `κ⁻¹`.
    pub fn with_inverse(
        kappa: DMatrix<f64>,
        kappa_inv: DMatrix<f64>,
        tasks: Vec<(Vec<usize>, &NoiseMatrix, DVector<f64>)>,
        lambda: f64,
        nu: f64,
        noise_floor: f64,
    ) -> Result<Self> {
        if tasks.is_empty() {
            return Err(ModelError::Empty("task list"));
        }
        if !(lambda >= 0.0) || !(nu > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "lambda/nu",
                reason: format!("need lambda >= 0 and nu > 0, got {lambda}, {nu}"),
            });
        }
        let n = kappa.nrows();
        let tasks = tasks
            .into_iter()
            .map(|(rows, noise, residuals)| {
                if rows.len() != noise.len() || rows.len() != residuals.len() {
                    return Err(ModelError::DimensionMismatch {
                        expected: rows.len(),
                        found: noise.len().max(residuals.len()),
                        context: "task rows, noise and residuals".into(),
                    });
                }
                if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
                    return Err(ModelError::DimensionMismatch {
                        expected: n,
                        found: bad,
                        context: "pooled row index".into(),
                    });
                }
                Ok(EmTask {
                    kappa_l: select_rows(&kappa, &rows),
                    rows,
                    noise: noise.floored(noise_floor).diag,
                    residuals,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kappa,
            kappa_inv,
            tasks,
            lambda,
            nu,
        })
    }

    pub fn n_pooled(&self) -> usize {
        self.kappa.nrows()
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Prior-mean starting point: `μ_α = 0`, `C_α = κ⁻¹`.
    pub fn initial_hyper(&self) -> (DVector<f64>, DMatrix<f64>) {
        (DVector::zeros(self.n_pooled()), self.kappa_inv.clone())
    }
}

/// Default noise floor: a tiny fraction of the variance of the responses
/// (1 when the responses are constant).
pub fn noise_floor_for(responses: &[f64]) -> f64 {
    let n = responses.len();
    if n < 2 {
        return NOISE_FLOOR_FRACTION;
    }
    let mean = responses.iter().sum::<f64>() / n as f64;
    let var = responses.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    if var > 0.0 && var.is_finite() {
        NOISE_FLOOR_FRACTION * var
    } else {
        NOISE_FLOOR_FRACTION
    }
}

/// Posterior mean and covariance of `α_l` given `(μ_α, C_α)`:
///
/// `C_αl = (κ_lᵀ Σ⁻¹ κ_l + C_α⁻¹)⁻¹`, `α̂_l = C_αl (κ_lᵀ Σ⁻¹ η_l + C_α⁻¹ μ_α)`.
///
/// Evaluated in the equivalent observation-space form
/// `α̂_l = μ_α + C_α κ_lᵀ S⁻¹ (η_l − κ_l μ_α)`, `C_αl = C_α − C_α κ_lᵀ S⁻¹ κ_l C_α`
/// with `S = κ_l C_α κ_lᵀ + Σ`, so that tiny noise entries never get inverted.
pub fn e_step(
    kappa_l: &DMatrix<f64>,
    noise: &[f64],
    eta: &DVector<f64>,
    mu_alpha: &DVector<f64>,
    c_alpha: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (nl, n) = kappa_l.shape();
    if noise.len() != nl || eta.len() != nl || mu_alpha.len() != n || c_alpha.shape() != (n, n) {
        return Err(ModelError::DimensionMismatch {
            expected: nl,
            found: eta.len(),
            context: "E-step operands".into(),
        });
    }
    let g = c_alpha * kappa_l.transpose();
    let mut s = kappa_l * &g;
    for (i, v) in noise.iter().enumerate() {
        s[(i, i)] += v;
    }
    let s = symmetrize(&s);
    let sf = factor_spd(&s)?;
    let r = eta - kappa_l * mu_alpha;
    let alpha = mu_alpha + &g * sf.solve_vec(&r);
    let h = sf.half_solve_mat(&g.transpose());
    let c_l = symmetrize(&(c_alpha - h.transpose() * h));
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("E-step mean"));
    }
    Ok((alpha, c_l))
}

/// Closed-form maximizer of the penalized objective over `(μ_α, C_α)`:
///
/// `μ_α = Σ α̂_l / (λ + m)`
///
/// `C_α = [λ μ_α μ_αᵀ + ν κ⁻¹ + Σ C_αl + Σ (α̂_l − μ_α)(α̂_l − μ_α)ᵀ] / (ν + m)`
pub fn m_step(
    alpha_hats: &[DVector<f64>],
    c_alpha_ls: &[DMatrix<f64>],
    kappa_inv: &DMatrix<f64>,
    lambda: f64,
    nu: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = alpha_hats.len();
    if m == 0 {
        return Err(ModelError::Empty("task posteriors"));
    }
    if c_alpha_ls.len() != m {
        return Err(ModelError::DimensionMismatch {
            expected: m,
            found: c_alpha_ls.len(),
            context: "posterior covariances".into(),
        });
    }
    let n = kappa_inv.nrows();
    let mut sum = DVector::zeros(n);
    for a in alpha_hats {
        sum += a;
    }
    let mu = sum / (lambda + m as f64);
    let mut acc = kappa_inv * nu + &mu * mu.transpose() * lambda;
    for (a, c) in alpha_hats.iter().zip(c_alpha_ls) {
        let d = a - &mu;
        acc += c;
        acc += &d * d.transpose();
    }
    let c_alpha = symmetrize(&(acc / (nu + m as f64)));
    if c_alpha.iter().any(|v| !v.is_finite()) || mu.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("M-step"));
    }
    Ok((mu, c_alpha))
}

/// Penalized EM objective at hyperparameters `(μ_α, C_α)` and task
/// posteriors `(α̂_l, C_αl)` taken from `state`.
///
/// This is the expected complete-data log-likelihood under the task
/// posteriors, plus their entropy, plus the log hyperprior
///
/// `ln p(μ_α, C_α) = −(ν/2) ln|C_α| − (ν/2) tr(κ⁻¹ C_α⁻¹) − (λ/2) μ_αᵀ C_α⁻¹ μ_α`.
///
/// Additive constants (the `2π` terms and the log noise variances) are
/// dropped; they do not change between iterations of one fit. When the task
/// posteriors come from an E-step at the same `(μ_α, C_α)`, the value equals
/// the log marginal posterior of `(μ_α, C_α)` up to that constant, which is
/// what EM increases monotonically. For fixed task posteriors the M-step
/// update is its exact maximizer.
pub fn penalized_objective(problem: &EmProblem, state: &ModelState) -> Result<f64> {
    let m = problem.n_tasks();
    if state.alpha_hat.len() != m || state.c_alpha_l.len() != m {
        return Err(ModelError::DimensionMismatch {
            expected: m,
            found: state.alpha_hat.len(),
            context: "task posteriors in state".into(),
        });
    }
    let cf = factor_spd(&state.c_alpha)?;
    let ln_det_c = cf.ln_det();
    let mu = &state.mu_alpha;
    let mut total = 0.0;
    for (l, task) in problem.tasks.iter().enumerate() {
        let a = &state.alpha_hat[l];
        let cl = &state.c_alpha_l[l];
        let fit = &task.kappa_l * a - &task.residuals;
        let quad_data: f64 = fit.iter().zip(&task.noise).map(|(r, s)| r * r / s).sum();
        let kck = &task.kappa_l * cl * task.kappa_l.transpose();
        let tr_data: f64 = (0..task.noise.len()).map(|i| kck[(i, i)] / task.noise[i]).sum();
        let d = a - mu;
        let quad_prior = d.dot(&cf.solve_vec(&d));
        let tr_prior = cf.solve_mat(cl).trace();
        let entropy = 0.5 * ln_det_spd(cl)?;
        total += -0.5 * ln_det_c - 0.5 * (quad_data + tr_data) - 0.5 * (quad_prior + tr_prior) + entropy;
    }
    let nu = problem.nu;
    let tr_hyper = cf.solve_mat(&problem.kappa_inv).trace();
    let mu_quad = mu.dot(&cf.solve_vec(mu));
    total += -0.5 * nu * ln_det_c - 0.5 * nu * tr_hyper - 0.5 * problem.lambda * mu_quad;
    if !total.is_finite() {
        return Err(ModelError::NonFinite("penalized objective"));
    }
    Ok(total)
}

fn ln_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    factor_spd(m).map(|f: SpdFactor| f.ln_det())
}

/// Runs EM to convergence (or `k1_max` iterations).
///
/// Starts from `init`'s `(μ_α, C_α)` when given, otherwise from `μ_α = 0`,
/// `C_α = κ⁻¹`. The returned state carries task posteriors from a final
/// E-step at the returned `(μ_α, C_α)`; its `beta_hat` and `sigma_eps` are
/// copied from `init` (empty without one).
pub fn run_em(
    problem: &EmProblem,
    config: &EmConfig,
    init: Option<&ModelState>,
) -> Result<(ModelState, EmTrace)> {
    config.validate()?;
    let n = problem.n_pooled();
    let (mut mu, mut c) = match init {
        Some(s) if s.mu_alpha.len() == n && s.c_alpha.shape() == (n, n) => {
            (s.mu_alpha.clone(), s.c_alpha.clone())
        }
        Some(s) => {
            return Err(ModelError::DimensionMismatch {
                expected: n,
                found: s.mu_alpha.len(),
                context: "initial state".into(),
            })
        }
        None => problem.initial_hyper(),
    };
    let mut iterations = Vec::new();
    let mut prev_alphas: Option<Vec<DVector<f64>>> = None;
    let mut stop = StopReason::MaxIterations;
    for k in 1..=config.k1_max {
        let posts = e_step_all(problem, &mu, &c)?;
        let (alphas, covs): (Vec<_>, Vec<_>) = posts.into_iter().unzip();
        let objective = if config.trace_objective {
            let snapshot = ModelState {
                mu_alpha: mu.clone(),
                c_alpha: c.clone(),
                alpha_hat: alphas.clone(),
                c_alpha_l: covs.clone(),
                beta_hat: Vec::new(),
                sigma_eps: Vec::new(),
            };
            Some(penalized_objective(problem, &snapshot)?)
        } else {
            None
        };
        let alpha_deltas: Option<Vec<(f64, f64)>> = prev_alphas.as_ref().map(|prev| {
            alphas
                .iter()
                .zip(prev)
                .map(|(a, p)| ((a - p).norm(), a.norm()))
                .collect()
        });
        let max_delta_alpha = alpha_deltas
            .as_ref()
            .map_or(f64::INFINITY, |d| d.iter().map(|x| x.0).fold(0.0, f64::max));
        let (mu_new, c_new) = m_step(&alphas, &covs, &problem.kappa_inv, problem.lambda, problem.nu)?;
        let delta_mu = (&mu_new - &mu).norm();
        iterations.push(EmIteration {
            iteration: k,
            objective,
            delta_mu,
            max_delta_alpha,
        });
        mu = mu_new;
        c = c_new;
        let converged = match config.criterion {
            StopCriterion::MuAlphaDelta => delta_mu < config.t1 * (mu.norm() + 1.0),
            StopCriterion::PerTaskAlphaDelta => alpha_deltas
                .as_ref()
                .is_some_and(|d| d.iter().all(|(da, na)| *da < config.t2 * (na + 1.0))),
        };
        prev_alphas = Some(alphas);
        if converged {
            stop = StopReason::Converged;
            break;
        }
    }
    let (alpha_hat, c_alpha_l): (Vec<_>, Vec<_>) = e_step_all(problem, &mu, &c)?.into_iter().unzip();
    let state = ModelState {
        mu_alpha: mu,
        c_alpha: c,
        alpha_hat,
        c_alpha_l,
        beta_hat: init.map(|s| s.beta_hat.clone()).unwrap_or_default(),
        sigma_eps: init.map(|s| s.sigma_eps.clone()).unwrap_or_default(),
    };
    Ok((state, EmTrace { iterations, stop }))
}

fn e_step_all(
    problem: &EmProblem,
    mu: &DVector<f64>,
    c: &DMatrix<f64>,
) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
    problem
        .tasks
        .par_iter()
        .map(|t| e_step(&t.kappa_l, &t.noise, &t.residuals, mu, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram_sym, KernelConfig};
    use crate::linalg::regularize_spd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_e_step() {
        let (a, c) = e_step(
            &scalar(1.0),
            &[0.25],
            &DVector::from_element(1, 2.0),
            &DVector::zeros(1),
            &scalar(1.0),
        )
        .unwrap();
        assert!((a[0] - 1.6).abs() < 1e-9);
        assert!((c[(0, 0)] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn uninformative_data_returns_the_prior() {
        let kl = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0]);
        let mu = DVector::from_vec(vec![0.5, -1.0]);
        let eta = DVector::from_vec(vec![3.0, 4.0]);
        let (a, cl) = e_step(&kl, &[1e12, 1e12], &eta, &mu, &c).unwrap();
        assert!((a - &mu).amax() < 1e-10);
        assert!((cl - &c).amax() < 1e-10);
    }

    #[test]
    fn e_step_matches_information_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..6.0)]).collect();
        let kappa = gram_sym(&KernelConfig::squared_exponential(2.0).unwrap(), &x).unwrap();
        let rows = vec![0, 2, 3];
        let kl = select_rows(&kappa, &rows);
        let noise = vec![0.3, 0.1, 0.5];
        let eta = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let mu = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let c = &b * b.transpose() + DMatrix::identity(n, n);
        let (a, cl) = e_step(&kl, &noise, &eta, &mu, &c).unwrap();
        // oracle: explicit inverses of the information-form normal equations
        let dinv = DMatrix::from_diagonal(&DVector::from_iterator(3, noise.iter().map(|s| 1.0 / s)));
        let cinv = c.clone().try_inverse().unwrap();
        let prec = kl.transpose() * &dinv * &kl + &cinv;
        let cov = prec.try_inverse().unwrap();
        let mean = &cov * (kl.transpose() * &dinv * &eta + &cinv * &mu);
        assert!((a - mean).amax() < 1e-8);
        assert!((cl - cov).amax() < 1e-8);
    }

    #[test]
    fn scalar_m_step() {
        let a = vec![DVector::from_element(1, 1.0); 2];
        let c = vec![scalar(0.0); 2];
        let (mu, _) = m_step(&a, &c, &scalar(1.0), 0.001, 1.0).unwrap();
        assert!((mu[0] - 2.0 / 2.001).abs() < 1e-15);
        assert!((mu[0] - 0.99950).abs() < 1e-5);

        // λ = 0, ν = 1, m = 1, α̂ = μ
        let a = vec![DVector::from_element(1, 0.7)];
        let (mu, c) = m_step(&a, &[scalar(0.2)], &scalar(1.0), 0.0, 1.0).unwrap();
        assert!((mu[0] - 0.7).abs() < 1e-15);
        assert!((c[(0, 0)] - 0.6).abs() < 1e-15);
    }

    fn problem_1(eta: f64, noise: f64) -> EmProblem {
        let nm = NoiseMatrix::new(vec![noise]).unwrap();
        EmProblem::with_inverse(
            scalar(1.0),
            scalar(1.0),
            vec![(vec![0], &nm, DVector::from_element(1, eta))],
            0.5,
            2.0,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn objective_by_hand_on_scalar_instance() {
        // κ = 1, C_α = κ⁻¹ = 1, μ = 0, α̂ = 0, η = 0, C_αl = 0.5, noise 0.25
        let p = problem_1(0.0, 0.25);
        let state = ModelState {
            mu_alpha: DVector::zeros(1),
            c_alpha: scalar(1.0),
            alpha_hat: vec![DVector::zeros(1)],
            c_alpha_l: vec![scalar(0.5)],
            beta_hat: vec![],
            sigma_eps: vec![],
        };
        let f = penalized_objective(&p, &state).unwrap();
        // −½ ln 1 − ½ (0 + 0.5/0.25) − ½ (0 + 0.5) + ½ ln 0.5 − ν/2 · 0 − ν/2 · 1 − 0
        let expected = -0.5 * 2.0 - 0.5 * 0.5 + 0.5 * 0.5f64.ln() - 1.0;
        assert!((f - expected).abs() < 1e-10, "{f} vs {expected}");
    }

    #[test]
    fn zero_residuals_converge_to_zero() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let kappa = gram_sym(&KernelConfig::squared_exponential(1.5).unwrap(), &x).unwrap();
        let nm = NoiseMatrix::new(vec![0.1; 5]).unwrap();
        let p = EmProblem::new(
            kappa,
            vec![((0..5).collect(), &nm, DVector::zeros(5))],
            0.001,
            1.0,
            1e-10,
            1e-12,
        )
        .unwrap();
        let (state, trace) = run_em(&p, &EmConfig::default(), None).unwrap();
        assert!(trace.converged());
        assert!(trace.len() <= 2);
        assert!(state.mu_alpha.amax() < 1e-12);
        assert!(state.alpha_hat[0].amax() < 1e-12);
    }

    #[test]
    fn identical_tasks_stay_identical() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.7]).collect();
        let kappa = gram_sym(&KernelConfig::squared_exponential(1.0).unwrap(), &x).unwrap();
        let nm = NoiseMatrix::new(vec![0.05; 6]).unwrap();
        let eta = DVector::from_fn(6, |i, _| (i as f64).sin());
        let p = EmProblem::new(
            kappa,
            vec![
                ((0..6).collect(), &nm, eta.clone()),
                ((0..6).collect(), &nm, eta),
            ],
            0.001,
            1.0,
            1e-10,
            1e-12,
        )
        .unwrap();
        let mut cfg = EmConfig::default();
        for k in 1..6 {
            cfg.k1_max = k;
            let (s, _) = run_em(&p, &cfg, None).unwrap();
            assert!((&s.alpha_hat[0] - &s.alpha_hat[1]).amax() < 1e-10);
        }
    }

    #[test]
    fn trace_csv_has_one_row_per_iteration() {
        let p = problem_1(1.0, 0.2);
        let (_, trace) = run_em(&p, &EmConfig::default(), None).unwrap();
        let csv = trace.to_csv();
        assert_eq!(csv.lines().count(), trace.len() + 1);
        assert!(csv.starts_with("iteration,objective"));
    }

    #[test]
    fn implied_moments_are_psd() {
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let kappa = gram_sym(&KernelConfig::squared_exponential(2.0).unwrap(), &x).unwrap();
        let nm = NoiseMatrix::new(vec![0.1; 4]).unwrap();
        let eta = DVector::from_vec(vec![0.3, -0.2, 0.5, 0.1]);
        let p = EmProblem::new(kappa.clone(), vec![((0..4).collect(), &nm, eta)], 0.001, 1.0, 1e-10, 1e-12)
            .unwrap();
        let (s, _) = run_em(&p, &EmConfig::default(), None).unwrap();
        let mean = s.implied_mean(&kappa);
        assert!((mean - &kappa * &s.mu_alpha).amax() < 1e-15);
        let cov = s.implied_covariance(&kappa);
        let eig = cov.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > -1e-10));
        assert!(regularize_spd(&cov, 1e-10).is_ok());
    }
}
