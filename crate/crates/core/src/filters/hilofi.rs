//! Full-rank last layer, low-rank hidden layers.
//!
//! Belief: `(η, ω, Σ̂_η^{1/2}, C_ω)` with `Σ ≈ blockdiag(C_ωᵀC_ω, Σ̂_ηᵀᐟ²Σ̂_η^{1/2})`
//! in `θ = (ω, η)` order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{
    check_observation, concat, innovation_solve, lowrank_block_update, std_normal_vec,
    FilterOptions, GaussianPredictive, NoiseConfig,
};
use crate::error::{invalid, Result};
use crate::linalg::{qr_stack, qr_update_lowrank, LowRankFactor, UpperTri};
use crate::net::{FlatParams, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct HiLoFiBelief {
    pub mean_last: DVector<f64>,
    pub mean_hidden: DVector<f64>,
    pub sigma_last_half: UpperTri,
    pub c_hidden: LowRankFactor,
}

/// Gains and factors of one step, for diagnostics and bound checks.
#[derive(Clone, Debug)]
pub struct HiLoFiStepInfo {
    pub s_half: UpperTri,
    /// `K_ηᵀ` (`D_y × D_η`).
    pub gain_last_t: DMatrix<f64>,
    /// `K_ωᵀ` (`D_y × D_ω`).
    pub gain_hidden_t: DMatrix<f64>,
    pub l_tilde: DMatrix<f64>,
    pub h_tilde: DMatrix<f64>,
    pub innovation: DVector<f64>,
}

impl HiLoFiBelief {
    pub fn new(
        mean_last: DVector<f64>,
        mean_hidden: DVector<f64>,
        sigma_last_half: UpperTri,
        c_hidden: LowRankFactor,
    ) -> Result<Self> {
        if sigma_last_half.dim() != mean_last.len() {
            return Err(invalid(
                "last-layer factor does not match the last-layer mean",
            ));
        }
        if c_hidden.ambient_dim() != mean_hidden.len() {
            return Err(invalid(
                "hidden factor width does not match the hidden mean",
            ));
        }
        if !mean_hidden.is_empty() && (c_hidden.rank() == 0 || c_hidden.rank() > mean_hidden.len())
        {
            return Err(invalid(format!(
                "hidden rank {} outside 1..={}",
                c_hidden.rank(),
                mean_hidden.len()
            )));
        }
        Ok(HiLoFiBelief {
            mean_last,
            mean_hidden,
            sigma_last_half,
            c_hidden,
        })
    }

    /// `Σ̂_η^{1/2} = sqrt(var_last) I`, `C_ω = sqrt(var_hidden)` times the first
    /// `d_hidden` rows of the identity. A model without hidden parameters gets
    /// an empty hidden factor.
    pub fn from_prior(
        params: &FlatParams,
        var_last: f64,
        var_hidden: f64,
        d_hidden: usize,
    ) -> Result<Self> {
        let dw = params.split();
        let dh = if dw == 0 { 0 } else { d_hidden };
        Self::new(
            DVector::from_column_slice(params.last()),
            DVector::from_column_slice(params.hidden()),
            UpperTri::scaled_identity(params.len() - dw, var_last.sqrt()),
            LowRankFactor::truncated_identity(dh, dw, var_hidden.sqrt()),
        )
    }

    pub fn mean_theta(&self) -> Vec<f64> {
        concat(&self.mean_hidden, &self.mean_last)
    }

    pub fn hidden_rank(&self) -> usize {
        self.c_hidden.rank()
    }

    /// Dense block-diagonal covariance in `θ` order. Tests and diagnostics only.
    pub fn dense_cov(&self) -> DMatrix<f64> {
        block_diag(&self.c_hidden.gram(), &self.sigma_last_half.gram())
    }

    /// `L Σ̂_η Lᵀ + H CᵀC Hᵀ + R`, from `D_y`-column products only.
    pub fn predictive<M: Model + ?Sized>(
        &self,
        model: &M,
        x: &[f64],
        noise: &NoiseConfig,
    ) -> GaussianPredictive {
        let (y, jp) = model.jacobians(&self.mean_theta(), x);
        let a = self.sigma_last_half.as_matrix() * jp.l_tilde.transpose();
        let mut epi = a.tr_mul(&a);
        if self.c_hidden.rank() > 0 {
            let b = self.c_hidden.as_matrix() * jp.h_tilde.transpose();
            epi += b.tr_mul(&b);
        }
        GaussianPredictive::new(y, epi, &noise.r())
    }

    pub fn sample_delta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let zh = std_normal_vec(rng, self.c_hidden.rank());
        let zl = std_normal_vec(rng, self.mean_last.len());
        let dh = self.c_hidden.as_matrix().tr_mul(&zh);
        let dl = self.sigma_last_half.as_matrix().tr_mul(&zl);
        concat(&dh, &dl)
    }
}

pub(crate) fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((n, n), (m, m)).copy_from(b);
    out
}

pub fn hilofi_step<M: Model + ?Sized>(
    belief: &HiLoFiBelief,
    model: &M,
    x: &[f64],
    y: &[f64],
    noise: &NoiseConfig,
) -> Result<HiLoFiBelief> {
    Ok(hilofi_step_with(belief, model, x, y, noise, &FilterOptions::default())?.0)
}

/// One HiLoFi step.
///
/// ```text
/// S^{1/2} = QR(Σ̂_η^{1/2}Lᵀ, √q_η Lᵀ, C Hᵀ, √q_ω Hᵀ, R^{1/2})
/// K_ωᵀ    = V_ω CᵀC + q_ω V_ω,          V_ω = S⁻¹H
/// K_ηᵀ    = V_η Σ̂_η + q_η V_η,           V_η = S⁻¹L
/// Σ̂_η'^{1/2} = QR(Σ̂_η^{1/2}(I − K_η L)ᵀ, R^{1/2}K_ηᵀ)
/// C'      = P_{d,+q_ω}(C(I − K_ω H)ᵀ, R^{1/2}K_ωᵀ)
/// ```
pub fn hilofi_step_with<M: Model + ?Sized>(
    belief: &HiLoFiBelief,
    model: &M,
    x: &[f64],
    y: &[f64],
    noise: &NoiseConfig,
    opts: &FilterOptions,
) -> Result<(HiLoFiBelief, HiLoFiStepInfo)> {
    check_observation(model, x, y, noise)?;
    if belief.mean_last.len() != model.last_len() || belief.mean_hidden.len() != model.hidden_len()
    {
        return Err(invalid("belief does not match the model partition"));
    }
    let (ql, qh) = (noise.q_last, noise.q_hidden);
    let has_hidden = !belief.mean_hidden.is_empty();
    let (yhat, jp) = model.jacobians(&belief.mean_theta(), x);
    let (l, h) = (&jp.l_tilde, &jp.h_tilde);
    let u = belief.sigma_last_half.as_matrix();
    let c = belief.c_hidden.as_matrix();
    let r_half = noise.r_half.as_matrix();

    let lt = l.transpose();
    let ult = u * &lt;
    let ht = h.transpose();
    let cht = c * &ht;

    let lq = if ql > 0.0 {
        Some(&lt * ql.sqrt())
    } else {
        None
    };
    let hq = if qh > 0.0 && has_hidden {
        Some(&ht * qh.sqrt())
    } else {
        None
    };
    let mut blocks: Vec<&DMatrix<f64>> = vec![&ult];
    blocks.extend(lq.as_ref());
    if has_hidden {
        blocks.push(&cht);
    }
    blocks.extend(hq.as_ref());
    blocks.push(r_half);
    if opts.reverse_stacking {
        blocks.reverse();
    }
    let s_half = qr_stack(&blocks)?;

    // hidden-layer gain
    let (kt_h, c_new) = if has_hidden {
        let v_h = innovation_solve(&s_half, h)?;
        lowrank_block_update(
            &belief.c_hidden,
            &cht,
            &s_half,
            &v_h,
            qh,
            r_half,
            opts.reverse_stacking,
        )?
    } else {
        (
            DMatrix::zeros(model.output_dim(), 0),
            belief.c_hidden.clone(),
        )
    };

    // last-layer gain
    let v_l = innovation_solve(&s_half, l)?;
    let mut kt_l = (&v_l * u.transpose()) * u;
    if ql > 0.0 {
        kt_l += &v_l * ql;
    }
    let rk_l = r_half * &kt_l;
    let u_new = if opts.fast_last_layer && !opts.reverse_stacking {
        // U(I − K_η L)ᵀ = U − (U Lᵀ) K_ηᵀ
        qr_update_lowrank(&belief.sigma_last_half, &(-&ult), &kt_l, &rk_l)?
    } else {
        let upd = u - &ult * &kt_l;
        let mut qb = vec![&upd, &rk_l];
        if opts.reverse_stacking {
            qb.reverse();
        }
        qr_stack(&qb)?
    };

    let eps = DVector::from_column_slice(y) - yhat;
    let mean_last = &belief.mean_last + kt_l.tr_mul(&eps);
    let mean_hidden = if has_hidden {
        &belief.mean_hidden + kt_h.tr_mul(&eps)
    } else {
        belief.mean_hidden.clone()
    };

    Ok((
        HiLoFiBelief {
            mean_last,
            mean_hidden,
            sigma_last_half: u_new,
            c_hidden: c_new,
        },
        HiLoFiStepInfo {
            s_half,
            gain_last_t: kt_l,
            gain_hidden_t: kt_h,
            l_tilde: jp.l_tilde,
            h_tilde: jp.h_tilde,
            innovation: eps,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, Activation, NetworkSpec};

    #[test]
    fn fast_and_full_last_layer_updates_agree() {
        let m = NetworkSpec::new(2, vec![4], 2, Activation::Elu).unwrap();
        let p = init_params(&m, 9);
        let b = HiLoFiBelief::from_prior(&p, 0.5, 0.3, 3).unwrap();
        let noise = NoiseConfig::isotropic(2, 0.2, 1e-3, 1e-4).unwrap();
        let fast = FilterOptions::default();
        let slow = FilterOptions {
            fast_last_layer: false,
            ..fast
        };
        let (a, _) = hilofi_step_with(&b, &m, &[0.2, 0.9], &[0.1, -0.4], &noise, &fast).unwrap();
        let (c, _) = hilofi_step_with(&b, &m, &[0.2, 0.9], &[0.1, -0.4], &noise, &slow).unwrap();
        let diff = a.sigma_last_half.as_matrix() - c.sigma_last_half.as_matrix();
        assert!(diff.norm() < 1e-12);
    }

    #[test]
    fn zero_noise_zero_innovation_keeps_means() {
        let m = NetworkSpec::new(2, vec![3], 1, Activation::Elu).unwrap();
        let p = init_params(&m, 2);
        let b = HiLoFiBelief::from_prior(&p, 1.0, 1.0, 2).unwrap();
        let noise = NoiseConfig::isotropic(1, 0.0, 0.0, 0.0).unwrap();
        let x = [0.7, 0.1];
        let y = Model::forward(&m, p.theta(), &x);
        let out = hilofi_step(&b, &m, &x, y.as_slice(), &noise).unwrap();
        assert_eq!(out.mean_last, b.mean_last);
        assert_eq!(out.mean_hidden, b.mean_hidden);
    }
}
