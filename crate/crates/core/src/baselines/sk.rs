//! Single-task stochastic kriging with maximum-likelihood hyperparameters.
//!
//! `Z̄ = U β + M + ε̄` with `Cov(M) = τ² κ_δ` and `Cov(ε̄) = Σ̂_ε` fixed from
//! the replicate variances. `β` is profiled out by generalized least squares;
//! `(δ², τ²)` are found by a simplex search over their logarithms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::kernels::{gram, gram_sym, KernelConfig};
use crate::linalg::{factor_spd, SpdFactor};
use crate::noise::NoiseMatrix;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::predict::{trend_variance, Prediction, PredictionComponents};
use crate::types::{basis_rows_to_matrix, sample_means, Location, TaskDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkModel {
    pub task_id: usize,
    pub beta: Vec<f64>,
    /// Squared length-scale of the spatial kernel.
    pub delta_sq: f64,
    /// Process variance multiplying the kernel.
    pub tau_sq: f64,
    pub noise: NoiseMatrix,
    pub locations: Vec<Location>,
    pub means: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    /// The likelihood search met its tolerance from at least one start.
    pub converged: bool,
    pub neg_log_likelihood: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkOptions {
    /// Search box for `δ²`, as fractions of the squared domain diagonal.
    pub delta_sq_range: (f64, f64),
    /// Search box for `τ²`, as multiples of the variance of the sample means.
    pub tau_sq_range: (f64, f64),
    /// Starting `δ²` values, as fractions of the squared domain diagonal.
    pub starts: Vec<f64>,
    pub max_evaluations: usize,
}

impl Default for SkOptions {
    fn default() -> Self {
        Self {
            delta_sq_range: (1e-5, 1.0),
            tau_sq_range: (1e-4, 1e2),
            starts: vec![1e-3, 1e-2, 1e-1],
            max_evaluations: 300,
        }
    }
}

struct Gls {
    beta: DVector<f64>,
    neg_log_likelihood: f64,
}

fn covariance(x: &[Location], delta_sq: f64, tau_sq: f64, noise: &NoiseMatrix) -> Result<DMatrix<f64>> {
    let mut k = gram_sym(&KernelConfig::squared_exponential(delta_sq)?, x)? * tau_sq;
    for (i, v) in noise.diag.iter().enumerate() {
        k[(i, i)] += v;
    }
    Ok(k)
}

/// Generalized least-squares trend for a fixed covariance factor:
/// `β = (Uᵀ K⁻¹ U)⁻¹ Uᵀ K⁻¹ z`.
pub fn profile_beta(factor: &SpdFactor, u: &DMatrix<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let ki_u = factor.solve_mat(u);
    let info = u.transpose() * &ki_u;
    let rhs = ki_u.transpose() * z;
    Ok(factor_spd(&info)?.solve_vec(&rhs))
}

fn gls(
    x: &[Location],
    u: &DMatrix<f64>,
    z: &DVector<f64>,
    noise: &NoiseMatrix,
    delta_sq: f64,
    tau_sq: f64,
) -> Result<Gls> {
    let k = covariance(x, delta_sq, tau_sq, noise)?;
    let factor = factor_spd(&k)?;
    let beta = profile_beta(&factor, u, z)?;
    let r = z - u * &beta;
    let quad = r.dot(&factor.solve_vec(&r));
    let neg_log_likelihood = 0.5 * factor.ln_det() + 0.5 * quad;
    Ok(Gls {
        beta,
        neg_log_likelihood,
    })
}

fn sample_var(z: &DVector<f64>) -> f64 {
    let n = z.len();
    if n < 2 {
        return 1.0;
    }
    let mean = z.mean();
    let v = z.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64;
    if v > 0.0 {
        v
    } else {
        1.0
    }
}

/// SK model with fixed kernel hyperparameters; `β` by GLS.
pub fn sk_fit_fixed(task: &TaskDataset, noise: &NoiseMatrix, delta_sq: f64, tau_sq: f64) -> Result<SkModel> {
    check(task, noise)?;
    let x = task.locations();
    let u = task.basis_matrix();
    let z = sample_means(task);
    let g = gls(&x, &u, &z, noise, delta_sq, tau_sq)?;
    Ok(SkModel {
        task_id: task.task_id,
        beta: g.beta.iter().copied().collect(),
        delta_sq,
        tau_sq,
        noise: noise.clone(),
        locations: x,
        means: z.iter().copied().collect(),
        basis: task.basis.clone(),
        converged: true,
        neg_log_likelihood: g.neg_log_likelihood,
    })
}

fn check(task: &TaskDataset, noise: &NoiseMatrix) -> Result<()> {
    if noise.len() != task.n_points() {
        return Err(ModelError::DimensionMismatch {
            expected: task.n_points(),
            found: noise.len(),
            context: "SK noise diagonal".into(),
        });
    }
    if task.n_points() < task.basis_dim() + 1 {
        return Err(ModelError::InvalidDataset(format!(
            "task {} has {} points; SK needs at least p + 1 = {}",
            task.task_id,
            task.n_points(),
            task.basis_dim() + 1
        )));
    }
    Ok(())
}

/// Maximum-likelihood SK fit for one task. Only this task's data is used.
///
/// When no start meets the simplex tolerance the best iterate is returned
/// with `converged = false`.
pub fn sk_fit(task: &TaskDataset, noise: &NoiseMatrix, opts: &SkOptions) -> Result<SkModel> {
    check(task, noise)?;
    let x = task.locations();
    let u = task.basis_matrix();
    let z = sample_means(task);
    let diag_sq = task.domain.diagonal().powi(2).max(f64::MIN_POSITIVE);
    let zvar = sample_var(&z);
    let (d_lo, d_hi) = (
        (opts.delta_sq_range.0 * diag_sq).ln(),
        (opts.delta_sq_range.1 * diag_sq).ln(),
    );
    let (t_lo, t_hi) = ((opts.tau_sq_range.0 * zvar).ln(), (opts.tau_sq_range.1 * zvar).ln());
    let clamp = |p: &[f64]| (p[0].clamp(d_lo, d_hi), p[1].clamp(t_lo, t_hi));
    let objective = |p: &[f64]| {
        let (ld, lt) = clamp(p);
        // quadratic wall outside the box keeps the simplex inside
        let wall = (p[0] - ld).powi(2) + (p[1] - lt).powi(2);
        match gls(&x, &u, &z, noise, ld.exp(), lt.exp()) {
            Ok(g) => g.neg_log_likelihood + wall,
            Err(_) => f64::INFINITY,
        }
    };
    let nm_opts = NelderMeadOptions {
        initial_step: 0.7,
        max_evaluations: opts.max_evaluations,
        f_tol: 1e-9,
        x_tol: 1e-6,
    };
    let mut best: Option<(f64, f64, f64, bool)> = None;
    for &s in &opts.starts {
        let start = [(s * diag_sq).ln().clamp(d_lo, d_hi), zvar.ln().clamp(t_lo, t_hi)];
        let m = nelder_mead(objective, &start, &nm_opts);
        let (ld, lt) = clamp(&m.x);
        if best.is_none_or(|b| m.value < b.2) {
            best = Some((ld, lt, m.value, m.converged));
        }
    }
    let (ld, lt, _, converged) = best.expect("at least one start");
    if !converged {
        eprintln!(
            "warning: SK likelihood search for task {} did not converge; using best iterate",
            task.task_id
        );
    }
    let mut model = sk_fit_fixed(task, noise, ld.exp(), lt.exp())?;
    model.converged = converged;
    Ok(model)
}

/// Kriging predictor and its mean-squared-error measure at `x_u`.
pub fn sk_predict(model: &SkModel, x_u: &[Location], basis: &[Vec<f64>]) -> Result<Prediction> {
    if x_u.len() != basis.len() {
        return Err(ModelError::DimensionMismatch {
            expected: x_u.len(),
            found: basis.len(),
            context: "query basis rows".into(),
        });
    }
    if let Some(row) = basis.iter().find(|r| r.len() != model.beta.len()) {
        return Err(ModelError::DimensionMismatch {
            expected: model.beta.len(),
            found: row.len(),
            context: "query basis columns".into(),
        });
    }
    let cfg = KernelConfig::squared_exponential(model.delta_sq)?;
    let k = covariance(&model.locations, model.delta_sq, model.tau_sq, &model.noise)?;
    let factor = factor_spd(&k)?;
    let u = basis_rows_to_matrix(&model.basis);
    let beta = DVector::from_column_slice(&model.beta);
    let z = DVector::from_column_slice(&model.means);
    let weights = factor.solve_vec(&(&z - &u * &beta));
    let cross = gram(&cfg, &model.locations, x_u)? * model.tau_sq;
    let q = x_u.len();
    let trend: Vec<f64> = basis
        .iter()
        .map(|row| row.iter().zip(&model.beta).map(|(a, b)| a * b).sum())
        .collect();
    let residual: Vec<f64> = (0..q).map(|j| cross.column(j).dot(&weights)).collect();
    let half = factor.half_solve_mat(&cross);
    let var_res: Vec<f64> = (0..q)
        .map(|j| (model.tau_sq - half.column(j).norm_squared()).max(0.0))
        .collect();
    let var_trend = if q == 0 {
        Vec::new()
    } else {
        trend_variance(&factor, &u, &cross, basis)?
    };
    Ok(Prediction {
        task_id: model.task_id,
        locations: x_u.to_vec(),
        mean: trend.iter().zip(&residual).map(|(a, b)| a + b).collect(),
        variance: var_res.iter().zip(&var_trend).map(|(a, b)| a + b).collect(),
        components: Some(PredictionComponents {
            trend,
            residual,
            variance_residual: var_res,
            variance_trend: var_trend,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{DomainBox, Measurement};

    fn task(xs: &[f64], zs: &[f64]) -> TaskDataset {
        let domain = DomainBox::new(vec![0.0], vec![10.0]).unwrap();
        let measurements = xs
            .iter()
            .zip(zs)
            .map(|(&x, &z)| Measurement {
                location: vec![x],
                replicates: vec![z],
                fidelity_id: "g".into(),
            })
            .collect();
        TaskDataset::new(0, domain, measurements, vec![vec![1.0]; xs.len()]).unwrap()
    }

    #[test]
    fn constant_data_gives_that_constant() {
        let t = task(&[1.0, 3.0, 4.5, 8.0], &[2.5; 4]);
        let noise = NoiseMatrix::new(vec![0.01; 4]).unwrap();
        let m = sk_fit(&t, &noise, &SkOptions::default()).unwrap();
        assert!((m.beta[0] - 2.5).abs() < 1e-8);
        for d in [0.5, 5.0, 50.0] {
            let m = sk_fit_fixed(&t, &noise, d, 1.0).unwrap();
            assert!((m.beta[0] - 2.5).abs() < 1e-8);
        }
    }

    #[test]
    fn profiled_beta_matches_explicit_gls() {
        let t = task(&[1.0, 2.0], &[0.7, 1.9]);
        let noise = NoiseMatrix::new(vec![0.1, 0.3]).unwrap();
        let m = sk_fit_fixed(&t, &noise, 2.0, 1.5).unwrap();
        let r = (-0.5f64).exp() * 1.5;
        let k = DMatrix::from_row_slice(2, 2, &[1.6, r, r, 1.8]);
        let ki = k.try_inverse().unwrap();
        let one = DVector::from_element(2, 1.0);
        let z = DVector::from_vec(vec![0.7, 1.9]);
        let beta = one.dot(&(&ki * &z)) / one.dot(&(&ki * &one));
        assert!((m.beta[0] - beta).abs() < 1e-8);
    }

    #[test]
    fn noiseless_single_point_by_hand() {
        let t = task(&[2.0, 6.0], &[1.0, 3.0]);
        let noise = NoiseMatrix::new(vec![0.0, 0.0]).unwrap();
        let mut m = sk_fit_fixed(&t, &noise, 1.0, 1.0).unwrap();
        // reduce to the single design point x₁ = 2
        m.locations.truncate(1);
        m.means.truncate(1);
        m.basis.truncate(1);
        m.noise = NoiseMatrix::new(vec![0.0]).unwrap();
        m.beta = vec![0.4];
        let q: Vec<Location> = vec![vec![2.0], vec![2.5], vec![4.0]];
        let p = sk_predict(&m, &q, &vec![vec![1.0]; 3]).unwrap();
        for (x, got) in q.iter().zip(&p.mean) {
            let k = (-(x[0] - 2.0f64).powi(2)).exp();
            let expected = 0.4 + k * (1.0 - 0.4);
            assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
        }
    }

    #[test]
    fn huge_noise_predicts_the_trend() {
        let t = task(&[1.0, 3.0, 6.0], &[1.0, 4.0, 2.0]);
        let noise = NoiseMatrix::new(vec![1e12; 3]).unwrap();
        let m = sk_fit_fixed(&t, &noise, 2.0, 1.0).unwrap();
        let p = sk_predict(&m, &[vec![3.0]], &[vec![1.0]]).unwrap();
        assert!((p.mean[0] - m.beta[0]).abs() < 1e-9);
    }
}
