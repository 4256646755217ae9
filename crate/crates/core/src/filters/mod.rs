//! Square-root Kalman filters for online learning of network parameters.
//!
//! Every filter linearises the model at the previous mean, forms the
//! innovation factor `S^{1/2}` by QR of stacked factors, and returns a new
//! belief; beliefs are immutable values.

mod checkpoint;
mod classify;
mod dense;
mod hilofi;
mod lolofi;
mod lrkf;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use classify::{classification_noise, moment_matched_obs, ObsCovForm};
pub use dense::{dense_predict_update, DenseBelief};
pub use hilofi::{hilofi_step, hilofi_step_with, HiLoFiBelief, HiLoFiStepInfo};
pub use lolofi::{lolofi_step, lolofi_step_with, LoLoFiBelief};
pub use lrkf::{lrkf_step, lrkf_step_with, LrkfBelief, LrkfStepInfo};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    gemm_into, lowrank_project_spanned_hinted, tri_solve_gram, LowRankFactor, UpperTri,
};
use crate::net::{FlatParams, Model};

/// Observation noise `R = r_halfᵀ r_half` and isotropic dynamics noise for
/// the last-layer (`q_last`) and hidden (`q_hidden`) blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    pub r_half: UpperTri,
    pub q_last: f64,
    pub q_hidden: f64,
}

impl NoiseConfig {
    pub fn new(r_half: UpperTri, q_last: f64, q_hidden: f64) -> Result<Self> {
        for (name, q) in [("q_last", q_last), ("q_hidden", q_hidden)] {
            if !q.is_finite() || q < 0.0 {
                return Err(invalid(format!(
                    "{name} must be finite and nonnegative, got {q}"
                )));
            }
        }
        Ok(NoiseConfig {
            r_half,
            q_last,
            q_hidden,
        })
    }

    /// `R = r_std² I` on `output_dim` outputs.
    pub fn isotropic(output_dim: usize, r_std: f64, q_last: f64, q_hidden: f64) -> Result<Self> {
        Self::new(
            UpperTri::scaled_identity(output_dim, r_std),
            q_last,
            q_hidden,
        )
    }

    pub fn r(&self) -> DMatrix<f64> {
        self.r_half.gram()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Dense,
    Lrkf,
    HiLoFi,
    LoLoFi,
}

/// Projection used for the LRKF factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    /// `P_{d,+q}`: the dynamics noise is folded into the kept singular values.
    #[default]
    Inflated,
    /// `P_d`: the dynamics noise is dropped after the update.
    Plain,
}

/// Knobs that do not belong to the belief state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterOptions {
    pub lrkf_projection: Projection,
    /// Stack the QR / projection blocks in reverse order. The result must not
    /// depend on it; exposed for testing.
    pub reverse_stacking: bool,
    /// Update the last-layer Cholesky factor with Givens rotations instead of a
    /// full QR of the stacked factor.
    pub fast_last_layer: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions {
            lrkf_projection: Projection::Inflated,
            reverse_stacking: false,
            fast_last_layer: true,
        }
    }
}

/// Gaussian one-step-ahead predictive. `cov = epistemic + R`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPredictive {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub epistemic: DMatrix<f64>,
}

impl GaussianPredictive {
    pub fn new(mean: DVector<f64>, epistemic: DMatrix<f64>, r: &DMatrix<f64>) -> Self {
        let epistemic = symmetrize(epistemic);
        let cov = symmetrize(&epistemic + r);
        GaussianPredictive {
            mean,
            cov,
            epistemic,
        }
    }

    pub fn aleatoric(&self) -> DMatrix<f64> {
        &self.cov - &self.epistemic
    }

    /// Marginal standard deviation of output `i`.
    pub fn std(&self, i: usize) -> f64 {
        self.cov[(i, i)].max(0.0).sqrt()
    }

    /// One draw `mean + cov^{1/2} z`. A zero covariance returns the mean.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.mean.len();
        if n == 1 {
            let z: f64 = rng.sample(StandardNormal);
            return DVector::from_element(1, self.mean[0] + self.std(0) * z);
        }
        let u = UpperTri::cholesky_psd(&self.cov)
            .expect("predictive covariance is PSD by construction");
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + u.as_matrix().tr_mul(&z)
    }
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// `S^{-1} rhs`, reporting a singular innovation as such.
pub(crate) fn innovation_solve(s_half: &UpperTri, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    tri_solve_gram(s_half, rhs).map_err(|e| match e {
        Error::Singular(_) => Error::SingularInnovation,
        other => other,
    })
}

/// Gain and projected factor for a low-rank block with factor `C`, block
/// Jacobian `J` and inflation `q`:
///
/// ```text
/// K_bᵀ = P C + q V,   V = S⁻¹J,  P = V Cᵀ
/// C'   = P_{d,+q}(C − (C Jᵀ) K_bᵀ, R^{1/2} K_bᵀ)
/// ```
///
/// Both stacked blocks are combinations of the rows of `C` and `V`, so the
/// projection works on that basis instead of the stacked matrix. `P` comes
/// from `S⁻¹ (C Jᵀ)ᵀ`, so `C` is read only for `K_bᵀ` and the new factor.
pub(crate) fn lowrank_block_update(
    c: &LowRankFactor,
    cjt: &DMatrix<f64>,
    s_half: &UpperTri,
    v: &DMatrix<f64>,
    q: f64,
    r_half: &DMatrix<f64>,
    reverse: bool,
) -> Result<(DMatrix<f64>, LowRankFactor)> {
    let cm = c.as_matrix();
    let d = c.rank();
    let dy = v.nrows();
    let (p, kt) = block_gain(cm, cjt, s_half, v, q)?;
    let nb = if q > 0.0 { d + dy } else { d };
    let mut top = DMatrix::zeros(d, nb);
    top.view_mut((0, 0), (d, d))
        .copy_from(&(DMatrix::identity(d, d) - cjt * &p));
    let mut bottom = DMatrix::zeros(dy, nb);
    bottom.view_mut((0, 0), (dy, d)).copy_from(&(r_half * &p));
    if q > 0.0 {
        top.view_mut((0, d), (d, dy)).copy_from(&(cjt * -q));
        bottom.view_mut((0, d), (dy, dy)).copy_from(&(r_half * q));
    }
    let coeff = if reverse {
        concat_rows(&bottom, &top)
    } else {
        concat_rows(&top, &bottom)
    };
    let norms = c.orthogonal_row_norms_sq();
    let projected = if q > 0.0 {
        lowrank_project_spanned_hinted(&coeff, &[cm, v], &[norms, None], d, q)?
    } else {
        lowrank_project_spanned_hinted(&coeff, &[cm], &[norms], d, q)?
    };
    Ok((kt, projected))
}

/// `P = S⁻¹ (C Jᵀ)ᵀ` and `K_bᵀ = P C + q V`.
pub(crate) fn block_gain(
    c: &DMatrix<f64>,
    cjt: &DMatrix<f64>,
    s_half: &UpperTri,
    v: &DMatrix<f64>,
    q: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = innovation_solve(s_half, &cjt.transpose())?;
    let (dy, cols) = (p.nrows(), c.ncols());
    let mut kt = DMatrix::from_vec(dy, cols, vec![0.0; dy * cols]);
    gemm_into(&p, false, c, false, 0.0, &mut kt);
    if q > 0.0 {
        kt += v * q;
    }
    Ok((p, kt))
}

fn concat_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    m.rows_mut(0, a.nrows()).copy_from(a);
    m.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    m
}

pub(crate) fn check_observation<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    y: &[f64],
    noise: &NoiseConfig,
) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(invalid(format!(
            "input has {} entries, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    if y.len() != model.output_dim() {
        return Err(invalid(format!(
            "observation has {} entries, model has {} outputs",
            y.len(),
            model.output_dim()
        )));
    }
    if noise.r_half.dim() != model.output_dim() {
        return Err(invalid(
            "observation noise factor does not match the output dimension",
        ));
    }
    Ok(())
}

pub(crate) fn std_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Any filter belief.
#[derive(Clone, Debug, PartialEq)]
pub enum Belief {
    Dense(DenseBelief),
    Lrkf(LrkfBelief),
    HiLoFi(HiLoFiBelief),
    LoLoFi(LoLoFiBelief),
}

/// Prior variances and factor ranks for [`Belief::from_prior`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorConfig {
    pub var_last: f64,
    pub var_hidden: f64,
    /// Hidden-block rank (HiLoFi, LoLoFi).
    pub rank_hidden: usize,
    /// Last-layer rank (LoLoFi).
    pub rank_last: usize,
    /// Joint rank (LRKF), whose single prior variance is `var_hidden`.
    pub rank: usize,
}

impl Belief {
    /// Scaled-identity prior of the given filter family centred at `params`.
    pub fn from_prior(
        kind: FilterKind,
        params: &FlatParams,
        prior: &PriorConfig,
    ) -> Result<Belief> {
        Ok(match kind {
            FilterKind::Dense => Belief::Dense(DenseBelief::from_prior(
                params,
                prior.var_last,
                prior.var_hidden,
            )),
            FilterKind::Lrkf => Belief::Lrkf(LrkfBelief::from_prior(
                params,
                prior.var_hidden,
                prior.rank,
            )?),
            FilterKind::HiLoFi => Belief::HiLoFi(HiLoFiBelief::from_prior(
                params,
                prior.var_last,
                prior.var_hidden,
                prior.rank_hidden,
            )?),
            FilterKind::LoLoFi => Belief::LoLoFi(LoLoFiBelief::from_prior(
                params,
                prior.var_last,
                prior.var_hidden,
                prior.rank_last,
                prior.rank_hidden,
            )?),
        })
    }

    pub fn kind(&self) -> FilterKind {
        match self {
            Belief::Dense(_) => FilterKind::Dense,
            Belief::Lrkf(_) => FilterKind::Lrkf,
            Belief::HiLoFi(_) => FilterKind::HiLoFi,
            Belief::LoLoFi(_) => FilterKind::LoLoFi,
        }
    }

    /// Mean parameters in `θ` layout (hidden block first).
    pub fn mean_theta(&self) -> Vec<f64> {
        match self {
            Belief::Dense(b) => b.mean.as_slice().to_vec(),
            Belief::Lrkf(b) => b.mean.as_slice().to_vec(),
            Belief::HiLoFi(b) => concat(&b.mean_hidden, &b.mean_last),
            Belief::LoLoFi(b) => concat(&b.mean_hidden, &b.mean_last),
        }
    }

    pub fn step<M: Model + ?Sized>(
        &self,
        model: &M,
        x: &[f64],
        y: &[f64],
        noise: &NoiseConfig,
        opts: &FilterOptions,
    ) -> Result<Belief> {
        Ok(match self {
            Belief::Dense(b) => Belief::Dense(dense_predict_update(b, model, x, y, noise)?),
            Belief::Lrkf(b) => Belief::Lrkf(lrkf_step_with(b, model, x, y, noise, opts)?.0),
            Belief::HiLoFi(b) => Belief::HiLoFi(hilofi_step_with(b, model, x, y, noise, opts)?.0),
            Belief::LoLoFi(b) => Belief::LoLoFi(lolofi_step_with(b, model, x, y, noise, opts)?),
        })
    }

    pub fn predictive<M: Model + ?Sized>(
        &self,
        model: &M,
        x: &[f64],
        noise: &NoiseConfig,
    ) -> GaussianPredictive {
        match self {
            Belief::Dense(b) => b.predictive(model, x, noise),
            Belief::Lrkf(b) => b.predictive(model, x, noise),
            Belief::HiLoFi(b) => b.predictive(model, x, noise),
            Belief::LoLoFi(b) => b.predictive(model, x, noise),
        }
    }

    /// Predictive mean only, without building any covariance.
    pub fn predictive_mean<M: Model + ?Sized>(&self, model: &M, x: &[f64]) -> DVector<f64> {
        model.forward(&self.mean_theta(), x)
    }

    /// One parameter perturbation `δ` (in `θ` layout) with covariance equal to
    /// the belief's EVC. The sampled function is `x ↦ f(μ, x) + J(x) δ`.
    pub fn sample_delta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Belief::Dense(b) => b.sample_delta(rng),
            Belief::Lrkf(b) => b.sample_delta(rng),
            Belief::HiLoFi(b) => b.sample_delta(rng),
            Belief::LoLoFi(b) => b.sample_delta(rng),
        }
    }
}

/// A coherent function draw from a belief.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionSample {
    pub mean_theta: Vec<f64>,
    pub delta: Vec<f64>,
}

impl FunctionSample {
    /// `f(μ, x) + J(μ, x) δ`.
    pub fn eval<M: Model + ?Sized>(&self, model: &M, x: &[f64]) -> DVector<f64> {
        let (y, dy) = model.jvp(&self.mean_theta, x, &self.delta);
        y + dy
    }
}

/// Draws one function from the linearised posterior.
pub fn sample_function<R: Rng + ?Sized>(belief: &Belief, rng: &mut R) -> FunctionSample {
    FunctionSample {
        mean_theta: belief.mean_theta(),
        delta: belief.sample_delta(rng),
    }
}

/// Predictive of any belief at `x`.
pub fn predictive<M: Model + ?Sized>(
    belief: &Belief,
    model: &M,
    x: &[f64],
    noise: &NoiseConfig,
) -> GaussianPredictive {
    belief.predictive(model, x, noise)
}

pub(crate) fn concat(hidden: &DVector<f64>, last: &DVector<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(hidden.len() + last.len());
    v.extend_from_slice(hidden.as_slice());
    v.extend_from_slice(last.as_slice());
    v
}
