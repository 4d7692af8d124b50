//! Symmetric positive-definite factorizations with a jitter ladder.
//!
//! Every solve against a covariance or precision matrix in this crate goes
//! through [`SpdFactor`]; explicit inverses are only formed where a formula
//! needs the matrix itself (the base-kernel precision in the M-step).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{ModelError, Result};

/// Number of times the jitter is multiplied by ten after the first attempt.
pub const JITTER_RETRIES: usize = 5;

/// Relative size of the first jitter, as a fraction of the mean diagonal.
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-10;

/// Cholesky factor of `M + jitter * I`.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    /// Jitter that was actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Lower-triangular factor `L` with `L Lᵀ = M + jitter * I`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `L⁻¹ B`, used for quadratic forms `Bᵀ M⁻¹ B = ‖L⁻¹ B‖²`.
    pub fn half_solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        symmetrize(&inv)
    }

    pub fn ln_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

/// Mean of the diagonal, or 1 when that mean is not a usable scale.
pub fn diagonal_scale(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let mean = m.diagonal().iter().map(|v| v.abs()).sum::<f64>() / m.nrows() as f64;
    if mean.is_finite() && mean > 0.0 {
        mean
    } else {
        1.0
    }
}

/// Starting jitter for `m`: a tiny fraction of its mean diagonal.
pub fn default_jitter(m: &DMatrix<f64>) -> f64 {
    DEFAULT_RELATIVE_JITTER * diagonal_scale(m)
}

/// Factorizes `m + jitter * I`, multiplying the jitter by ten on failure
/// (at most [`JITTER_RETRIES`] times).
pub fn regularize_spd(m: &DMatrix<f64>, jitter: f64) -> Result<SpdFactor> {
    if !m.is_square() {
        return Err(ModelError::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
            context: "square matrix required".into(),
        });
    }
    if jitter <= 0.0 || !jitter.is_finite() {
        return Err(ModelError::InvalidParameter {
            name: "jitter",
            reason: format!("must be finite and positive, got {jitter}"),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("matrix passed to SPD factorization"));
    }
    let n = m.nrows();
    let sym = symmetrize(m);
    let mut j = jitter;
    for attempt in 0..=JITTER_RETRIES {
        let mut shifted = sym.clone();
        for i in 0..n {
            shifted[(i, i)] += j;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(SpdFactor { chol, jitter: j });
        }
        if attempt < JITTER_RETRIES {
            j *= 10.0;
        }
    }
    Err(ModelError::KernelDegeneracy {
        size: n,
        last_jitter: j,
    })
}

/// Same as [`regularize_spd`] with the jitter ladder starting at
/// [`default_jitter`].
pub fn factor_spd(m: &DMatrix<f64>) -> Result<SpdFactor> {
    regularize_spd(m, default_jitter(m))
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Rows of `m` selected by `rows`, in order.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_factorizes_first_try() {
        let f = regularize_spd(&DMatrix::identity(3, 3), 1e-10).unwrap();
        assert_eq!(f.jitter(), 1e-10);
        assert!((f.ln_det() - 3.0 * (1.0f64 + 1e-10).ln()).abs() < 1e-14);
    }

    #[test]
    fn all_ones_needs_only_the_first_jitter() {
        // eigenvalues {2 + j, j}
        let m = DMatrix::from_element(2, 2, 1.0);
        let f = regularize_spd(&m, 1e-8).unwrap();
        assert_eq!(f.jitter(), 1e-8);
        let expected = ((2.0 + 1e-8) * 1e-8f64).ln();
        assert!((f.ln_det() - expected).abs() < 1e-6);
    }

    #[test]
    fn negative_eigenvalue_is_degenerate() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let err = regularize_spd(&m, default_jitter(&m)).unwrap_err();
        match err {
            ModelError::KernelDegeneracy { size, last_jitter } => {
                assert_eq!(size, 2);
                assert!((last_jitter - 1e-10 * 1e5).abs() < 1e-18);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ladder_escalates_until_success() {
        // smallest eigenvalue -1e-7: needs jitter > 1e-7
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-7]));
        let f = regularize_spd(&m, 1e-9).unwrap();
        assert!((f.jitter() - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn solve_matches_inverse() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = regularize_spd(&m, 1e-14).unwrap();
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = f.solve_vec(&b);
        let y = f.inverse() * &b;
        assert!((&x - &y).norm() < 1e-12);
        let h = f.half_solve_mat(&DMatrix::from_column_slice(3, 1, b.as_slice()));
        assert!((h.norm_squared() - b.dot(&x)).abs() < 1e-12);
    }
}
