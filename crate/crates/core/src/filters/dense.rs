//! Dense EKF with a Joseph-form covariance update. Quadratic memory in `D_θ`;
//! used as the reference for the structured filters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{check_observation, std_normal_vec, symmetrize, GaussianPredictive, NoiseConfig};
use crate::error::{invalid, Error, Result};
use crate::linalg::UpperTri;
use crate::net::{FlatParams, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `D_ω`: the first `split` entries of `mean` are the hidden block.
    pub split: usize,
}

impl DenseBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, split: usize) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(invalid("covariance shape does not match the mean"));
        }
        if split > mean.len() {
            return Err(invalid("split exceeds the parameter count"));
        }
        Ok(DenseBelief { mean, cov, split })
    }

    /// Block-diagonal prior `diag(var_hidden I, var_last I)` around `params`.
    pub fn from_prior(params: &FlatParams, var_last: f64, var_hidden: f64) -> Self {
        let n = params.len();
        let split = params.split();
        let cov = DMatrix::from_fn(n, n, |i, j| {
            if i != j {
                0.0
            } else if i < split {
                var_hidden
            } else {
                var_last
            }
        });
        DenseBelief {
            mean: DVector::from_column_slice(params.theta()),
            cov,
            split,
        }
    }

    /// `Σ + blockdiag(q_hidden I, q_last I)`.
    pub fn predicted_cov(&self, noise: &NoiseConfig) -> DMatrix<f64> {
        let mut p = self.cov.clone();
        for i in 0..p.nrows() {
            p[(i, i)] += if i < self.split {
                noise.q_hidden
            } else {
                noise.q_last
            };
        }
        p
    }

    pub fn predictive<M: Model + ?Sized>(
        &self,
        model: &M,
        x: &[f64],
        noise: &NoiseConfig,
    ) -> GaussianPredictive {
        let (y, jp) = model.jacobians(self.mean.as_slice(), x);
        let j = jp.full();
        let epi = &j * &self.cov * j.transpose();
        GaussianPredictive::new(y, epi, &noise.r())
    }

    pub fn sample_delta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u = UpperTri::cholesky_psd(&symmetrize(self.cov.clone()))
            .expect("belief covariance is PSD");
        let z = std_normal_vec(rng, self.mean.len());
        u.as_matrix().tr_mul(&z).as_slice().to_vec()
    }
}

/// One predict/update step of the dense EKF.
///
/// `P = Σ + Q`, `S = J P Jᵀ + R`, `K = P Jᵀ S⁻¹`, mean `μ + K ε` with
/// `ε = y − f(μ, x)`, covariance `(I − KJ) P (I − KJ)ᵀ + K R Kᵀ`.
pub fn dense_predict_update<M: Model + ?Sized>(
    belief: &DenseBelief,
    model: &M,
    x: &[f64],
    y: &[f64],
    noise: &NoiseConfig,
) -> Result<DenseBelief> {
    check_observation(model, x, y, noise)?;
    if belief.mean.len() != model.param_len() || belief.split != model.hidden_len() {
        return Err(invalid("belief does not match the model partition"));
    }
    let (yhat, jp) = model.jacobians(belief.mean.as_slice(), x);
    let j = jp.full();
    let r = noise.r();
    let p = belief.predicted_cov(noise);
    let pjt = &p * j.transpose();
    let s = symmetrize(&j * &pjt + &r);
    let chol = s.clone().cholesky().ok_or(Error::SingularInnovation)?;
    // Kᵀ = S⁻¹ J P
    let kt = chol.solve(&pjt.transpose());
    let k = kt.transpose();
    let eps = DVector::from_column_slice(y) - yhat;
    let mean = &belief.mean + &k * eps;
    let n = p.nrows();
    let a = DMatrix::identity(n, n) - &k * &j;
    let cov = symmetrize(&a * p * a.transpose() + &k * r * kt);
    Ok(DenseBelief {
        mean,
        cov,
        split: belief.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, NetworkSpec};

    fn scalar_model() -> NetworkSpec {
        // f = η₀ x + η₁
        NetworkSpec::new(1, vec![], 1, Activation::Elu).unwrap()
    }

    #[test]
    fn scalar_kalman_numbers() {
        let m = scalar_model();
        // bias parameter pinned with zero variance so only the slope learns
        let mut b = DenseBelief::from_prior(&FlatParams::new(vec![0.0, 0.0], 0).unwrap(), 1.0, 1.0);
        b.cov[(1, 1)] = 0.0;
        let noise = NoiseConfig::isotropic(1, 1.0, 0.0, 0.0).unwrap();
        let out = dense_predict_update(&b, &m, &[1.0], &[1.0], &noise).unwrap();
        assert!((out.mean[0] - 0.5).abs() < 1e-15);
        assert!((out.cov[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let m = scalar_model();
        let b = DenseBelief::from_prior(&FlatParams::new(vec![2.0, 1.0], 0).unwrap(), 1.0, 1.0);
        let noise = NoiseConfig::isotropic(1, 0.3, 0.0, 0.0).unwrap();
        let out = dense_predict_update(&b, &m, &[0.5], &[2.0], &noise).unwrap();
        assert_eq!(out.mean, b.mean);
        assert!(out.cov.trace() < b.cov.trace());
    }

    #[test]
    fn singular_innovation() {
        let m = scalar_model();
        let b = DenseBelief::new(DVector::zeros(2), DMatrix::zeros(2, 2), 0).unwrap();
        let noise = NoiseConfig::isotropic(1, 0.0, 0.0, 0.0).unwrap();
        let err = dense_predict_update(&b, &m, &[1.0], &[1.0], &noise).unwrap_err();
        assert!(matches!(err, Error::SingularInnovation));
    }
}
