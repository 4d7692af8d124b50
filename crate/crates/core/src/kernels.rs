//! Base kernel, Gram matrices and the composite extrinsic covariance that
//! blends the learned kernel `κ C_α κ` with the base kernel.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::types::Location;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `exp(-‖x − x'‖² / δ²)`
    SquaredExponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub delta_sq: f64,
}

impl KernelConfig {
    pub fn squared_exponential(delta_sq: f64) -> Result<Self> {
        if !(delta_sq > 0.0) || !delta_sq.is_finite() {
            return Err(ModelError::InvalidParameter {
                name: "delta_sq",
                reason: format!("must be finite and positive, got {delta_sq}"),
            });
        }
        Ok(Self {
            kind: KernelKind::SquaredExponential,
            delta_sq,
        })
    }

    #[inline]
    fn eval_unchecked(&self, xi: &[f64], xj: &[f64]) -> f64 {
        match self.kind {
            KernelKind::SquaredExponential => {
                let sq: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / self.delta_sq).exp()
            }
        }
    }
}

/// Kernel value between two locations.
pub fn eval_kernel(cfg: &KernelConfig, xi: &[f64], xj: &[f64]) -> Result<f64> {
    if xi.len() != xj.len() {
        return Err(ModelError::DimensionMismatch {
            expected: xi.len(),
            found: xj.len(),
            context: "kernel arguments".into(),
        });
    }
    Ok(cfg.eval_unchecked(xi, xj))
}

fn check_dims(a: &[Location], b: &[Location]) -> Result<()> {
    let d = match a.first().or(b.first()) {
        Some(x) => x.len(),
        None => return Ok(()),
    };
    for x in a.iter().chain(b) {
        if x.len() != d {
            return Err(ModelError::DimensionMismatch {
                expected: d,
                found: x.len(),
                context: "gram matrix arguments".into(),
            });
        }
    }
    Ok(())
}

/// `|A| × |B|` matrix of kernel values. Empty sets give empty matrices.
pub fn gram(cfg: &KernelConfig, a: &[Location], b: &[Location]) -> Result<DMatrix<f64>> {
    check_dims(a, b)?;
    let (na, nb) = (a.len(), b.len());
    // column-major storage: fill one column of B at a time
    let data: Vec<f64> = (0..nb)
        .into_par_iter()
        .flat_map_iter(|j| a.iter().map(move |ai| cfg.eval_unchecked(ai, &b[j])))
        .collect();
    Ok(DMatrix::from_vec(na, nb, data))
}

/// Symmetric Gram matrix of a single set.
pub fn gram_sym(cfg: &KernelConfig, a: &[Location]) -> Result<DMatrix<f64>> {
    let mut k = gram(cfg, a, a)?;
    let n = k.nrows();
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = k[(i, j)];
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// The learned extrinsic covariance blended with the base kernel by their
/// equivalent sample sizes `m` (task count) and `nu`:
///
/// `[m κ(X, a)ᵀ C_α κ(X, b) + ν κ(a, b)] / (m + ν)`
///
/// where `X` is the pooled design on which `C_α` lives.
pub fn composite_covariance(
    c_alpha: &DMatrix<f64>,
    pooled: &[Location],
    cfg: &KernelConfig,
    m: f64,
    nu: f64,
    a: &[Location],
    b: &[Location],
) -> Result<DMatrix<f64>> {
    let n = pooled.len();
    if c_alpha.nrows() != n || c_alpha.ncols() != n {
        return Err(ModelError::DimensionMismatch {
            expected: n,
            found: c_alpha.nrows(),
            context: "C_alpha against pooled design".into(),
        });
    }
    let ka = gram(cfg, pooled, a)?;
    let kb = gram(cfg, pooled, b)?;
    let kab = gram(cfg, a, b)?;
    Ok(composite_from_grams(c_alpha, &ka, &kb, &kab, m, nu))
}

/// [`composite_covariance`] from precomputed Gram blocks `κ(X, a)`,
/// `κ(X, b)` and `κ(a, b)`.
pub fn composite_from_grams(
    c_alpha: &DMatrix<f64>,
    k_xa: &DMatrix<f64>,
    k_xb: &DMatrix<f64>,
    k_ab: &DMatrix<f64>,
    m: f64,
    nu: f64,
) -> DMatrix<f64> {
    let learned = k_xa.transpose() * (c_alpha * k_xb);
    (learned * m + k_ab * nu) / (m + nu)
}
