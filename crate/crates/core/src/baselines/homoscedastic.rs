//! Multi-task model with a single homoscedastic noise level shared by every
//! point of every task. Fidelity information is ignored; the variance is
//! learned from the residuals.

use nalgebra::{DMatrix, DVector};

use crate::em::EmConfig;
use crate::error::Result;
use crate::kernels::KernelConfig;
use crate::linalg::{factor_spd, symmetrize};
use crate::noise::NoiseMatrix;
use crate::optim::golden_section;
use crate::predict::FittedModel;
use crate::trend::{fit_pipeline, NoiseContext, NoiseProvider, OuterTrace, TrendConfig};
use crate::types::{HyperParams, PooledDesign, TaskDataset};

const GRID_POINTS: usize = 20;
const GOLDEN_ITERATIONS: usize = 60;
/// Lower end of the variance search, relative to the response variance.
pub const LOWER_BOUND_FRACTION: f64 = 1e-10;
/// Upper end of the variance search, relative to the response variance.
pub const UPPER_BOUND_FRACTION: f64 = 10.0;

/// Learns `σ²` before every EM pass by maximizing the Gaussian marginal
/// likelihood of the stacked residuals under `Σ_M + σ² I`, where `Σ_M` is the
/// composite covariance of the current state (the base kernel before the
/// first pass). Search: 20 log-spaced grid points, then golden section
/// between the neighbours of the best grid point.
#[derive(Debug, Default)]
pub struct LearnedHomoscedastic {
    pub last: Option<f64>,
}

/// Composite covariance on the pooled design,
/// `[m κ C_α κ + ν κ] / (m + ν)`.
fn pooled_composite(kappa: &DMatrix<f64>, c_alpha: Option<&DMatrix<f64>>, m: f64, nu: f64) -> DMatrix<f64> {
    match c_alpha {
        Some(c) => symmetrize(&((kappa * c * kappa * m + kappa * nu) / (m + nu))),
        None => kappa.clone(),
    }
}

/// Negative log marginal likelihood (without the `2π` constant) of `r`
/// under `N(0, k + σ² I)`.
pub fn residual_nll(k: &DMatrix<f64>, r: &DVector<f64>, sigma_sq: f64) -> f64 {
    let mut s = k.clone();
    for i in 0..s.nrows() {
        s[(i, i)] += sigma_sq;
    }
    match factor_spd(&s) {
        Ok(f) => 0.5 * f.ln_det() + 0.5 * r.dot(&f.solve_vec(r)),
        Err(_) => f64::INFINITY,
    }
}

/// Maximum-likelihood `σ²` in `[lower, upper]` for residuals `r` with
/// signal covariance `k`.
pub fn search_variance(k: &DMatrix<f64>, r: &DVector<f64>, lower: f64, upper: f64) -> f64 {
    let (a, b) = (lower.ln(), upper.ln());
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| a + (b - a) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let f = |ls: f64| residual_nll(k, r, ls.exp());
    let values: Vec<f64> = grid.iter().map(|&g| f(g)).collect();
    let best = values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(GRID_POINTS - 1)];
    let (ls, _) = golden_section(f, lo, hi, GOLDEN_ITERATIONS);
    ls.exp().clamp(lower, upper)
}

impl NoiseProvider for LearnedHomoscedastic {
    fn noise(&mut self, ctx: &NoiseContext<'_>) -> Result<Vec<NoiseMatrix>> {
        let m = ctx.residuals.len() as f64;
        let pooled_k = pooled_composite(ctx.kappa, ctx.previous.map(|s| &s.c_alpha), m, ctx.nu);
        let rows: Vec<usize> = ctx.pooled.index_maps.iter().flatten().copied().collect();
        let k = DMatrix::from_fn(rows.len(), rows.len(), |i, j| pooled_k[(rows[i], rows[j])]);
        let r = DVector::from_iterator(rows.len(), ctx.residuals.iter().flat_map(|v| v.iter().copied()));
        let lower = LOWER_BOUND_FRACTION * ctx.response_variance;
        let upper = UPPER_BOUND_FRACTION * ctx.response_variance;
        let sigma_sq = search_variance(&k, &r, lower, upper);
        self.last = Some(sigma_sq);
        ctx.residuals
            .iter()
            .map(|v| NoiseMatrix::homoscedastic(v.len(), sigma_sq))
            .collect()
    }

    fn reported_variance(&self) -> Option<f64> {
        self.last
    }
}

/// Homoscedastic multi-task fit; returns the model, the outer trace and the
/// final learned `σ̂²`.
pub fn homoscedastic_mtl_fit(
    tasks: &[TaskDataset],
    pooled: &PooledDesign,
    kernel: &KernelConfig,
    hyper: &HyperParams,
    em_cfg: &EmConfig,
    trend_cfg: &TrendConfig,
) -> Result<(FittedModel, OuterTrace, f64)> {
    let mut provider = LearnedHomoscedastic::default();
    let (model, trace) = fit_pipeline(tasks, pooled, kernel, hyper, em_cfg, trend_cfg, &mut provider)?;
    let sigma_sq = provider.last.expect("at least one EM pass");
    Ok((model, trace, sigma_sq))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_residuals_hit_the_lower_bound() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let r = DVector::zeros(2);
        assert_eq!(search_variance(&k, &r, 1e-10, 10.0), 1e-10);
    }

    #[test]
    fn white_noise_variance_is_recovered() {
        // k = 0: the maximizer is the mean square of r
        let r = DVector::from_vec(vec![0.3, -0.5, 0.1, 0.4, -0.2, 0.6]);
        let k = DMatrix::zeros(6, 6);
        let s = search_variance(&k, &r, 1e-6, 10.0);
        let ms = r.norm_squared() / 6.0;
        assert!((s - ms).abs() < 1e-6 * ms, "{s} vs {ms}");
    }
}
