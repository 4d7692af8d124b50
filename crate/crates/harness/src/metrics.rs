//! Accuracy metrics.

use crate::error::{HarnessError, Result};

/// Root mean squared error, `√(Σ(ŷ − y)² / N)`.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(HarnessError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(HarnessError::Empty("rmse input"));
    }
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Percentage improvement over a baseline,
/// `(RMSE_baseline − RMSE_hmtmf) / RMSE_baseline × 100`; negative when the
/// hierarchical model is worse.
pub fn delta_rmse(rmse_baseline: f64, rmse_hmtmf: f64) -> Result<f64> {
    if !(rmse_baseline > 0.0) {
        return Err(HarnessError::ZeroBaseline(rmse_baseline));
    }
    Ok((rmse_baseline - rmse_hmtmf) / rmse_baseline * 100.0)
}

/// Mean and sample standard deviation (`n − 1`; zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// 17 significant digits, round-trip exact.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let r = rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
        assert!((r - 3.5355).abs() < 1e-4);
        let c = rmse(&[1.7, 2.7, -0.3], &[1.0, 2.0, -1.0]).unwrap();
        assert!((c - 0.7).abs() < 1e-12);
    }

    #[test]
    fn rmse_rejects_bad_lengths() {
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(HarnessError::LengthMismatch(1, 2))));
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn delta_rmse_examples() {
        assert!((delta_rmse(1.0, 0.8691).unwrap() - 13.09).abs() < 1e-10);
        assert_eq!(delta_rmse(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(delta_rmse(2.0, 1.0).unwrap(), 50.0);
        assert!(delta_rmse(1.0, 1.5).unwrap() < 0.0);
        assert!(delta_rmse(0.0, 1.0).is_err());
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fmt17_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 123456.789] {
            assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
        }
    }
}
