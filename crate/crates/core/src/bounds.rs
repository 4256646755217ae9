//! Per-step covariance and mean error bounds for the structured filters.
//!
//! These are diagnostics: the residual eigenvalues they need come from a dense
//! eigen-decomposition, which only small test problems can afford.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::filters::{HiLoFiBelief, HiLoFiStepInfo, LrkfBelief, LrkfStepInfo, NoiseConfig};
use crate::linalg::{matmul, symmetric_eigen, LowRankFactor};

type Mat = DMatrix<f64>;

/// Individual terms of the HiLoFi covariance bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HiLoFiBoundTerms {
    /// `q_ω (2‖K_ω H‖_F + ‖K_ω H‖_F²)`.
    pub hidden_surrogate: f64,
    /// `q_η ‖(I − K_η L)(I − K_η L)ᵀ‖_F`.
    pub last_surrogate: f64,
    /// `sqrt(Σ λ_k²)` over the residual eigenvalues.
    pub projection: f64,
    /// `‖K_η R K_ωᵀ‖_F`.
    pub cross: f64,
}

impl HiLoFiBoundTerms {
    /// Cross term entering as `2‖·‖_F²`.
    pub fn squared_cross_total(&self) -> f64 {
        self.hidden_surrogate
            + self.last_surrogate
            + self.projection
            + 2.0 * self.cross * self.cross
    }

    /// Cross term entering as `2‖·‖_F`.
    pub fn linear_cross_total(&self) -> f64 {
        self.hidden_surrogate + self.last_surrogate + self.projection + 2.0 * self.cross
    }

    /// The larger of the two totals.
    pub fn loosest(&self) -> f64 {
        self.squared_cross_total().max(self.linear_cross_total())
    }
}

fn residual_norm(residual_eigs: &[f64]) -> f64 {
    residual_eigs.iter().map(|l| l * l).sum::<f64>().sqrt()
}

/// Terms of the HiLoFi bound. Gains are `K_η` (`D_η × D_y`) and `K_ω`
/// (`D_ω × D_y`); `r` is the observation covariance.
#[allow(clippy::too_many_arguments)]
pub fn hilofi_bound_terms(
    k_last: &Mat,
    k_hidden: &Mat,
    l_tilde: &Mat,
    h_tilde: &Mat,
    r: &Mat,
    q_last: f64,
    q_hidden: f64,
    residual_eigs: &[f64],
) -> HiLoFiBoundTerms {
    let kh = (k_hidden * h_tilde).norm();
    let n = k_last.nrows();
    let a = Mat::identity(n, n) - k_last * l_tilde;
    HiLoFiBoundTerms {
        hidden_surrogate: q_hidden * (2.0 * kh + kh * kh),
        last_surrogate: q_last * (&a * a.transpose()).norm(),
        projection: residual_norm(residual_eigs),
        cross: (k_last * r * k_hidden.transpose()).norm(),
    }
}

/// HiLoFi covariance bound with the cross term squared.
#[allow(clippy::too_many_arguments)]
pub fn hilofi_cov_bound(
    k_last: &Mat,
    k_hidden: &Mat,
    l_tilde: &Mat,
    h_tilde: &Mat,
    r: &Mat,
    q_last: f64,
    q_hidden: f64,
    residual_eigs: &[f64],
) -> f64 {
    hilofi_bound_terms(
        k_last,
        k_hidden,
        l_tilde,
        h_tilde,
        r,
        q_last,
        q_hidden,
        residual_eigs,
    )
    .squared_cross_total()
}

/// HiLoFi covariance bound with the cross term unsquared.
#[allow(clippy::too_many_arguments)]
pub fn hilofi_cov_bound_unsquared(
    k_last: &Mat,
    k_hidden: &Mat,
    l_tilde: &Mat,
    h_tilde: &Mat,
    r: &Mat,
    q_last: f64,
    q_hidden: f64,
    residual_eigs: &[f64],
) -> f64 {
    hilofi_bound_terms(
        k_last,
        k_hidden,
        l_tilde,
        h_tilde,
        r,
        q_last,
        q_hidden,
        residual_eigs,
    )
    .linear_cross_total()
}

/// LRKF covariance bound `q (2‖KH‖_F + ‖KH‖_F²) + sqrt(Σ λ_k²)`.
pub fn lrkf_cov_bound(k: &Mat, h: &Mat, q: f64, residual_eigs: &[f64]) -> f64 {
    let kh = (k * h).norm();
    q * (2.0 * kh + kh * kh) + residual_norm(residual_eigs)
}

/// Eigenvalues of `NᵀN + a·I` beyond the `d` largest, for the stacked
/// factor `N = [C − (C Jᵀ) Kᵀ; R^{1/2} Kᵀ]` of one low-rank update. Uses the
/// small Gram matrix `N Nᵀ`; the `D − rows(N)` trailing values all equal `a`.
pub fn update_residual_eigs(
    c: &LowRankFactor,
    jacobian: &Mat,
    gain_t: &Mat,
    r_half: &Mat,
    a: f64,
) -> Vec<f64> {
    let cm = c.as_matrix();
    let n_dim = cm.ncols();
    let upd = cm - (cm * jacobian.transpose()) * gain_t;
    let rk = r_half * gain_t;
    let rows = upd.nrows() + rk.nrows();
    let mut stacked = Mat::zeros(rows, n_dim);
    stacked.rows_mut(0, upd.nrows()).copy_from(&upd);
    stacked.rows_mut(upd.nrows(), rk.nrows()).copy_from(&rk);
    let (vals, _) = if rows <= n_dim {
        symmetric_eigen(&matmul(&stacked, false, &stacked, true))
    } else {
        symmetric_eigen(&matmul(&stacked, true, &stacked, false))
    };
    let mut all: Vec<f64> = vals.iter().map(|v| v.max(0.0) + a).collect();
    all.resize(n_dim, a);
    all.split_off(c.rank().min(n_dim))
}

/// Bound terms for a HiLoFi step that went from `prev` to the state
/// described by `info`.
pub fn hilofi_step_bound(
    prev: &HiLoFiBelief,
    info: &HiLoFiStepInfo,
    noise: &NoiseConfig,
) -> HiLoFiBoundTerms {
    let r_half = noise.r_half.as_matrix();
    let residual = if prev.mean_hidden.is_empty() {
        Vec::new()
    } else {
        update_residual_eigs(
            &prev.c_hidden,
            &info.h_tilde,
            &info.gain_hidden_t,
            r_half,
            noise.q_hidden,
        )
    };
    hilofi_bound_terms(
        &info.gain_last_t.transpose(),
        &info.gain_hidden_t.transpose(),
        &info.l_tilde,
        &info.h_tilde,
        &noise.r(),
        noise.q_last,
        noise.q_hidden,
        &residual,
    )
}

/// LRKF bound for a step that went from `prev` to the state described by
/// `info` (inflated projection).
pub fn lrkf_step_bound(prev: &LrkfBelief, info: &LrkfStepInfo, noise: &NoiseConfig) -> f64 {
    let residual = update_residual_eigs(
        &prev.w,
        &info.jacobian,
        &info.gain_t,
        noise.r_half.as_matrix(),
        noise.q_hidden,
    );
    lrkf_cov_bound(
        &info.gain_t.transpose(),
        &info.jacobian,
        noise.q_hidden,
        &residual,
    )
}

/// Bound on `‖θ_dense − θ_lrkf‖₂` after one step of a scalar linear model
/// `y = θᵀx + e`, `e ~ N(0, r2)`, when the LRKF prior is the best rank-`d`
/// approximation of `sigma_prev`:
///
/// `|ε| σ_{d+1} ‖x‖ (1/γ + σ₁ ‖x‖² / γ²)`,
/// `γ = min(xᵀΣx, xᵀΣ̂x) + r2`.
pub fn lrkf_blup_gap_bound(
    eps: f64,
    sigma_prev: &Mat,
    x: &DVector<f64>,
    r2: f64,
    d: usize,
) -> Result<f64> {
    let n = sigma_prev.nrows();
    if !sigma_prev.is_square() || x.len() != n {
        return Err(invalid("covariance and feature dimensions disagree"));
    }
    if d == 0 || d > n {
        return Err(invalid(format!("rank {d} outside 1..={n}")));
    }
    if r2 < 0.0 {
        return Err(invalid("observation variance must be nonnegative"));
    }
    let (evals, evecs) = symmetric_eigen(sigma_prev);
    let sig1 = evals[0].max(0.0);
    let sig_next = if d < n { evals[d].max(0.0) } else { 0.0 };
    let mut hat = Mat::zeros(n, n);
    for (k, ev) in evals.iter().take(d).enumerate() {
        let v = evecs.column(k);
        hat += v * v.transpose() * ev.max(0.0);
    }
    let full = x.dot(&(sigma_prev * x));
    let trunc = x.dot(&(&hat * x));
    let gamma = full.min(trunc) + r2;
    if gamma <= 0.0 {
        return Err(invalid(
            "γ = 0: zero observation noise with a prior that is blind to x",
        ));
    }
    let xn = x.norm();
    Ok(eps.abs() * sig_next * xn * (1.0 / gamma + sig1 * xn * xn / (gamma * gamma)))
}
