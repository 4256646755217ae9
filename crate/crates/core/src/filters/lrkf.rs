//! Low-rank Kalman filter: one rank-`d` factor `W` over all of `θ`,
//! `Σ ≈ WᵀW`, with isotropic dynamics noise `q = q_hidden`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{
    block_gain, check_observation, innovation_solve, lowrank_block_update, std_normal_vec,
    FilterOptions, GaussianPredictive, NoiseConfig, Projection,
};
use crate::error::{invalid, Result};
use crate::linalg::{lowrank_project, qr_stack, LowRankFactor, UpperTri};
use crate::net::{FlatParams, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct LrkfBelief {
    pub mean: DVector<f64>,
    pub w: LowRankFactor,
}

/// Intermediate quantities of one LRKF step, for diagnostics.
#[derive(Clone, Debug)]
pub struct LrkfStepInfo {
    pub s_half: UpperTri,
    /// `Kᵀ` (`D_y × D_θ`).
    pub gain_t: DMatrix<f64>,
    pub jacobian: DMatrix<f64>,
    pub innovation: DVector<f64>,
}

impl LrkfBelief {
    pub fn new(mean: DVector<f64>, w: LowRankFactor) -> Result<Self> {
        if w.ambient_dim() != mean.len() {
            return Err(invalid("factor width does not match the mean"));
        }
        if w.rank() == 0 || w.rank() > mean.len() {
            return Err(invalid(format!(
                "rank {} outside 1..={}",
                w.rank(),
                mean.len()
            )));
        }
        Ok(LrkfBelief { mean, w })
    }

    /// `W₀ = sqrt(var)` times the first `d` rows of the identity.
    pub fn from_prior(params: &FlatParams, var: f64, d: usize) -> Result<Self> {
        let n = params.len();
        Self::new(
            DVector::from_column_slice(params.theta()),
            LowRankFactor::truncated_identity(d, n, var.sqrt()),
        )
    }

    pub fn rank(&self) -> usize {
        self.w.rank()
    }

    pub fn predictive<M: Model + ?Sized>(
        &self,
        model: &M,
        x: &[f64],
        noise: &NoiseConfig,
    ) -> GaussianPredictive {
        let (y, jp) = model.jacobians(self.mean.as_slice(), x);
        let wj = self.w.as_matrix() * jp.full().transpose();
        GaussianPredictive::new(y, wj.tr_mul(&wj), &noise.r())
    }

    pub fn sample_delta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = std_normal_vec(rng, self.rank());
        self.w.as_matrix().tr_mul(&z).as_slice().to_vec()
    }
}

pub fn lrkf_step<M: Model + ?Sized>(
    belief: &LrkfBelief,
    model: &M,
    x: &[f64],
    y: &[f64],
    noise: &NoiseConfig,
) -> Result<LrkfBelief> {
    Ok(lrkf_step_with(belief, model, x, y, noise, &FilterOptions::default())?.0)
}

/// One LRKF step.
///
/// `S^{1/2} = QR(W Jᵀ, √q Jᵀ, R^{1/2})`, `Kᵀ = S⁻¹J WᵀW + q S⁻¹J`,
/// `W' = P_{d,+q}(W − (W Jᵀ) Kᵀ, R^{1/2} Kᵀ)` (or `P_d` with
/// [`Projection::Plain`]).
pub fn lrkf_step_with<M: Model + ?Sized>(
    belief: &LrkfBelief,
    model: &M,
    x: &[f64],
    y: &[f64],
    noise: &NoiseConfig,
    opts: &FilterOptions,
) -> Result<(LrkfBelief, LrkfStepInfo)> {
    check_observation(model, x, y, noise)?;
    if belief.mean.len() != model.param_len() {
        return Err(invalid("belief does not match the model parameter count"));
    }
    let q = noise.q_hidden;
    let w = belief.w.as_matrix();
    let (yhat, jp) = model.jacobians(belief.mean.as_slice(), x);
    let j = jp.full();
    let jt = j.transpose();
    let wjt = w * &jt;
    let r_half = noise.r_half.as_matrix();

    let sq = if q > 0.0 { Some(&jt * q.sqrt()) } else { None };
    let mut blocks: Vec<&DMatrix<f64>> = vec![&wjt];
    if let Some(b) = &sq {
        blocks.push(b);
    }
    blocks.push(r_half);
    if opts.reverse_stacking {
        blocks.reverse();
    }
    let s_half = qr_stack(&blocks)?;

    let v = innovation_solve(&s_half, &j)?;
    let eps = DVector::from_column_slice(y) - yhat;
    let (kt, w_new) = match opts.lrkf_projection {
        Projection::Inflated => lowrank_block_update(
            &belief.w,
            &wjt,
            &s_half,
            &v,
            q,
            r_half,
            opts.reverse_stacking,
        )?,
        Projection::Plain => {
            let kt = block_gain(w, &wjt, &s_half, &v, q)?.1;
            let upd = w - &wjt * &kt;
            let rk = r_half * &kt;
            let mut pblocks = vec![&upd, &rk];
            if opts.reverse_stacking {
                pblocks.reverse();
            }
            (kt, lowrank_project(&pblocks, belief.rank())?)
        }
    };
    let mean = &belief.mean + kt.tr_mul(&eps);

    Ok((
        LrkfBelief { mean, w: w_new },
        LrkfStepInfo {
            s_half,
            gain_t: kt,
            jacobian: j,
            innovation: eps,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, NetworkSpec};

    #[test]
    fn scalar_kalman_numbers_rank_one() {
        // f = η₀ x + η₁ with rank-1 factor on the slope only
        let m = NetworkSpec::new(1, vec![], 1, Activation::Elu).unwrap();
        let b =
            LrkfBelief::from_prior(&FlatParams::new(vec![0.0, 0.0], 0).unwrap(), 1.0, 1).unwrap();
        let noise = NoiseConfig::isotropic(1, 1.0, 0.0, 0.0).unwrap();
        let (out, info) =
            lrkf_step_with(&b, &m, &[1.0], &[1.0], &noise, &FilterOptions::default()).unwrap();
        assert!((out.mean[0] - 0.5).abs() < 1e-15);
        assert!((out.w.gram()[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((info.s_half.gram()[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((info.gain_t[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let m = NetworkSpec::new(2, vec![3], 1, Activation::Tanh).unwrap();
        let p = crate::net::init_params(&m, 1);
        let b = LrkfBelief::from_prior(&p, 0.1, 4).unwrap();
        let noise = NoiseConfig::isotropic(1, 0.1, 0.0, 1e-3).unwrap();
        let x = [0.3, -0.2];
        let y = Model::forward(&m, p.theta(), &x);
        let out = lrkf_step(&b, &m, &x, y.as_slice(), &noise).unwrap();
        assert_eq!(out.mean, b.mean);
    }
}
