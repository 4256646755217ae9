//! Low-rank factors on both the last-layer and hidden-layer blocks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::hilofi::block_diag;
use super::{
    check_observation, concat, innovation_solve, lowrank_block_update, std_normal_vec,
    FilterOptions, GaussianPredictive, NoiseConfig,
};
use crate::error::{invalid, Result};
use crate::linalg::{qr_stack, LowRankFactor};
use crate::net::{FlatParams, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct LoLoFiBelief {
    pub mean_last: DVector<f64>,
    pub mean_hidden: DVector<f64>,
    pub c_last: LowRankFactor,
    pub c_hidden: LowRankFactor,
}

impl LoLoFiBelief {
    pub fn new(
        mean_last: DVector<f64>,
        mean_hidden: DVector<f64>,
        c_last: LowRankFactor,
        c_hidden: LowRankFactor,
    ) -> Result<Self> {
        if c_last.ambient_dim() != mean_last.len() || c_hidden.ambient_dim() != mean_hidden.len() {
            return Err(invalid("factor widths do not match the means"));
        }
        if c_last.rank() == 0 || c_last.rank() > mean_last.len() {
            return Err(invalid(format!(
                "last-layer rank {} outside 1..={}",
                c_last.rank(),
                mean_last.len()
            )));
        }
        if !mean_hidden.is_empty() && (c_hidden.rank() == 0 || c_hidden.rank() > mean_hidden.len())
        {
            return Err(invalid(format!(
                "hidden rank {} outside 1..={}",
                c_hidden.rank(),
                mean_hidden.len()
            )));
        }
        Ok(LoLoFiBelief {
            mean_last,
            mean_hidden,
            c_last,
            c_hidden,
        })
    }

    pub fn from_prior(
        params: &FlatParams,
        var_last: f64,
        var_hidden: f64,
        d_last: usize,
        d_hidden: usize,
    ) -> Result<Self> {
        let dw = params.split();
        let dh = if dw == 0 { 0 } else { d_hidden };
        Self::new(
            DVector::from_column_slice(params.last()),
            DVector::from_column_slice(params.hidden()),
            LowRankFactor::truncated_identity(d_last, params.len() - dw, var_last.sqrt()),
            LowRankFactor::truncated_identity(dh, dw, var_hidden.sqrt()),
        )
    }

    pub fn mean_theta(&self) -> Vec<f64> {
        concat(&self.mean_hidden, &self.mean_last)
    }

    pub fn dense_cov(&self) -> DMatrix<f64> {
        block_diag(&self.c_hidden.gram(), &self.c_last.gram())
    }

    pub fn predictive<M: Model + ?Sized>(
        &self,
        model: &M,
        x: &[f64],
        noise: &NoiseConfig,
    ) -> GaussianPredictive {
        let (y, jp) = model.jacobians(&self.mean_theta(), x);
        let a = self.c_last.as_matrix() * jp.l_tilde.transpose();
        let mut epi = a.tr_mul(&a);
        if self.c_hidden.rank() > 0 {
            let b = self.c_hidden.as_matrix() * jp.h_tilde.transpose();
            epi += b.tr_mul(&b);
        }
        GaussianPredictive::new(y, epi, &noise.r())
    }

    pub fn sample_delta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let zh = std_normal_vec(rng, self.c_hidden.rank());
        let zl = std_normal_vec(rng, self.c_last.rank());
        let dh = self.c_hidden.as_matrix().tr_mul(&zh);
        let dl = self.c_last.as_matrix().tr_mul(&zl);
        concat(&dh, &dl)
    }
}

pub fn lolofi_step<M: Model + ?Sized>(
    belief: &LoLoFiBelief,
    model: &M,
    x: &[f64],
    y: &[f64],
    noise: &NoiseConfig,
) -> Result<LoLoFiBelief> {
    lolofi_step_with(belief, model, x, y, noise, &FilterOptions::default())
}

/// One LoLoFi step: HiLoFi with the last-layer factor replaced by
/// `C_η' = P_{d_η,+q_η}(C_η(I − K_η L)ᵀ, R^{1/2}K_ηᵀ)` and
/// `K_ηᵀ = V_η C_ηᵀC_η + q_η V_η`.
pub fn lolofi_step_with<M: Model + ?Sized>(
    belief: &LoLoFiBelief,
    model: &M,
    x: &[f64],
    y: &[f64],
    noise: &NoiseConfig,
    opts: &FilterOptions,
) -> Result<LoLoFiBelief> {
    check_observation(model, x, y, noise)?;
    if belief.mean_last.len() != model.last_len() || belief.mean_hidden.len() != model.hidden_len()
    {
        return Err(invalid("belief does not match the model partition"));
    }
    let (ql, qh) = (noise.q_last, noise.q_hidden);
    let has_hidden = !belief.mean_hidden.is_empty();
    let (yhat, jp) = model.jacobians(&belief.mean_theta(), x);
    let (l, h) = (&jp.l_tilde, &jp.h_tilde);
    let cl = belief.c_last.as_matrix();
    let ch = belief.c_hidden.as_matrix();
    let r_half = noise.r_half.as_matrix();

    let lt = l.transpose();
    let ht = h.transpose();
    let clt = cl * &lt;
    let cht = ch * &ht;
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
    let mut blocks: Vec<&DMatrix<f64>> = vec![&clt];
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

    let eps = DVector::from_column_slice(y) - yhat;
    let (mean_hidden, c_hidden) = if has_hidden {
        let v = innovation_solve(&s_half, h)?;
        let (kt, c) = lowrank_block_update(
            &belief.c_hidden,
            &cht,
            &s_half,
            &v,
            qh,
            r_half,
            opts.reverse_stacking,
        )?;
        (&belief.mean_hidden + kt.tr_mul(&eps), c)
    } else {
        (belief.mean_hidden.clone(), belief.c_hidden.clone())
    };

    let v = innovation_solve(&s_half, l)?;
    let (kt, c_last) = lowrank_block_update(
        &belief.c_last,
        &clt,
        &s_half,
        &v,
        ql,
        r_half,
        opts.reverse_stacking,
    )?;
    let mean_last = &belief.mean_last + kt.tr_mul(&eps);

    Ok(LoLoFiBelief {
        mean_last,
        mean_hidden,
        c_last,
        c_hidden,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, NetworkSpec};

    #[test]
    fn scalar_kalman_numbers() {
        // slope-only linear model: f = η₀ x + η₁, rank-1 factor on η₀
        let m = NetworkSpec::new(1, vec![], 1, Activation::Elu).unwrap();
        let b =
            LoLoFiBelief::from_prior(&FlatParams::new(vec![0.0, 0.0], 0).unwrap(), 1.0, 1.0, 1, 1)
                .unwrap();
        let noise = NoiseConfig::isotropic(1, 1.0, 0.0, 0.0).unwrap();
        let out = lolofi_step(&b, &m, &[1.0], &[1.0], &noise).unwrap();
        assert!((out.mean_last[0] - 0.5).abs() < 1e-15);
        assert!((out.c_last.gram()[(0, 0)] - 0.5).abs() < 1e-14);
    }
}
