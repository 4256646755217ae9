//! Moment-matched Gaussian observation model for one-hot class labels.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::NoiseConfig;
use crate::error::{invalid, Result};
use crate::linalg::UpperTri;
use crate::net::softmax;

/// Sign of the outer-product term in the observation covariance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsCovForm {
    /// `diag(m) − m mᵀ + εI`, the multinomial covariance.
    #[default]
    Multinomial,
    /// `diag(m) + m mᵀ + εI`.
    PlusOuter,
}

/// Pseudo-observation mean `softmax(logits)` and covariance
/// `diag(m) ∓ m mᵀ + εI`.
pub fn moment_matched_obs(
    logits: &[f64],
    eps: f64,
    form: ObsCovForm,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(eps > 0.0) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    let m = softmax(logits);
    let sign = match form {
        ObsCovForm::Multinomial => -1.0,
        ObsCovForm::PlusOuter => 1.0,
    };
    let n = m.len();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { m[i] + eps } else { 0.0 };
        diag + sign * m[i] * m[j]
    });
    Ok((m, cov))
}

/// Noise configuration for one classification step at the given logits.
pub fn classification_noise(
    logits: &[f64],
    eps: f64,
    form: ObsCovForm,
    q_last: f64,
    q_hidden: f64,
) -> Result<NoiseConfig> {
    let (_, cov) = moment_matched_obs(logits, eps, form)?;
    NoiseConfig::new(UpperTri::cholesky_psd(&cov)?, q_last, q_hidden)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let eps = 1e-3;
        let (m, cov) = moment_matched_obs(&[0.4, 0.4, 0.4], eps, ObsCovForm::Multinomial).unwrap();
        for i in 0..3 {
            assert!((m[i] - 1.0 / 3.0).abs() < 1e-15);
            for j in 0..3 {
                let expect = if i == j { 1.0 / 3.0 + eps } else { 0.0 } - 1.0 / 9.0;
                assert!((cov[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn saturated_logits() {
        let eps = 1e-2;
        let (m, cov) = moment_matched_obs(&[40.0, 0.0, 5.0], eps, ObsCovForm::Multinomial).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-9);
        assert!((cov - DMatrix::identity(3, 3) * eps).norm() < 1e-9);
    }

    #[test]
    fn rejects_nonpositive_eps() {
        assert!(moment_matched_obs(&[0.0, 1.0], 0.0, ObsCovForm::Multinomial).is_err());
    }
}
