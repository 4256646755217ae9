//! Contextual bandit environments.

use std::sync::Arc;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::mnist::MnistDataset;
use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, DRIFT_STREAM, ENV_STREAM};

/// Outcome of pulling one arm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardOutcome {
    /// Realised (noisy) reward.
    pub reward: f64,
    /// Noise-free reward of the chosen arm.
    pub expected: f64,
    /// Noise-free reward of the best arm for this context.
    pub best_expected: f64,
}

impl RewardOutcome {
    /// Per-step regret `best_expected − expected`, never negative.
    pub fn regret(&self) -> f64 {
        (self.best_expected - self.expected).max(0.0)
    }
}

#[derive(Clone, Debug)]
pub enum BanditKind {
    /// `reward = θ*_aᵀ c + noise`; `θ*` performs a Gaussian random walk with
    /// per-step variance `drift_var` (zero for a stationary problem).
    Linear {
        theta_star: Vec<DVector<f64>>,
        noise_std: f64,
        drift_var: f64,
    },
    /// Classification bandit: context is an image, arms are classes, reward is
    /// 1 for the correct class.
    Mnist {
        data: Arc<MnistDataset>,
        order: Vec<usize>,
    },
}

#[derive(Clone, Debug)]
pub struct BanditEnv {
    pub kind: BanditKind,
    rng: ChaCha8Rng,
    drift_rng: ChaCha8Rng,
    cursor: usize,
    context: Option<DVector<f64>>,
    label: Option<u8>,
}

impl BanditEnv {
    /// Stationary linear contextual bandit with `θ*_a ~ N(0, I)`.
    pub fn linear(num_arms: usize, context_dim: usize, noise_std: f64, seed: u64) -> Result<Self> {
        Self::drifting(num_arms, context_dim, noise_std, 0.0, seed)
    }

    /// Linear bandit whose `θ*` drifts by `N(0, drift_var I)` after every
    /// reward. The drift draws come from their own stream, so `drift_var = 0`
    /// reproduces [`BanditEnv::linear`] exactly.
    pub fn drifting(
        num_arms: usize,
        context_dim: usize,
        noise_std: f64,
        drift_var: f64,
        seed: u64,
    ) -> Result<Self> {
        if num_arms == 0 || context_dim == 0 {
            return Err(invalid(
                "bandit needs at least one arm and one context feature",
            ));
        }
        if !(noise_std >= 0.0) || !(drift_var >= 0.0) {
            return Err(invalid("noise and drift must be nonnegative"));
        }
        let mut rng = stream_rng(seed, ENV_STREAM);
        let theta_star = (0..num_arms)
            .map(|_| DVector::from_fn(context_dim, |_, _| rng.sample(StandardNormal)))
            .collect();
        Ok(BanditEnv {
            kind: BanditKind::Linear {
                theta_star,
                noise_std,
                drift_var,
            },
            rng,
            drift_rng: stream_rng(seed, DRIFT_STREAM),
            cursor: 0,
            context: None,
            label: None,
        })
    }

    /// Classification bandit over a shuffled pass through `data`.
    pub fn mnist(data: Arc<MnistDataset>, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(invalid("empty dataset"));
        }
        let mut rng = stream_rng(seed, ENV_STREAM);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        Ok(BanditEnv {
            kind: BanditKind::Mnist { data, order },
            rng,
            drift_rng: stream_rng(seed, DRIFT_STREAM),
            cursor: 0,
            context: None,
            label: None,
        })
    }

    pub fn num_actions(&self) -> usize {
        match &self.kind {
            BanditKind::Linear { theta_star, .. } => theta_star.len(),
            BanditKind::Mnist { .. } => 10,
        }
    }

    pub fn context_dim(&self) -> usize {
        match &self.kind {
            BanditKind::Linear { theta_star, .. } => theta_star[0].len(),
            BanditKind::Mnist { data, .. } => data.image_len(),
        }
    }

    /// Draws the next context.
    pub fn context(&mut self) -> Result<DVector<f64>> {
        let c = match &self.kind {
            BanditKind::Linear { theta_star, .. } => {
                let n = theta_star[0].len();
                DVector::from_fn(n, |_, _| self.rng.sample(StandardNormal))
            }
            BanditKind::Mnist { data, order } => {
                let i = *order.get(self.cursor).ok_or(Error::EndOfStream)?;
                self.cursor += 1;
                self.label = Some(data.labels[i]);
                DVector::from_column_slice(data.image(i))
            }
        };
        self.context = Some(c.clone());
        Ok(c)
    }

    fn expected_rewards(&self, context: &DVector<f64>) -> Vec<f64> {
        match &self.kind {
            BanditKind::Linear { theta_star, .. } => {
                theta_star.iter().map(|t| t.dot(context)).collect()
            }
            BanditKind::Mnist { .. } => {
                let label = self.label.expect("context drawn before reward") as usize;
                (0..10)
                    .map(|a| if a == label { 1.0 } else { 0.0 })
                    .collect()
            }
        }
    }

    /// Reward for `action` at the most recent context.
    pub fn reward(&mut self, action: usize) -> Result<RewardOutcome> {
        if action >= self.num_actions() {
            return Err(invalid(format!(
                "action {action} outside 0..{}",
                self.num_actions()
            )));
        }
        let context = self
            .context
            .clone()
            .ok_or_else(|| invalid("reward requested before a context was drawn"))?;
        let means = self.expected_rewards(&context);
        let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let expected = means[action];
        let reward = match &mut self.kind {
            BanditKind::Linear {
                theta_star,
                noise_std,
                drift_var,
            } => {
                let z: f64 = self.rng.sample(StandardNormal);
                let r = expected + *noise_std * z;
                if *drift_var > 0.0 {
                    let s = drift_var.sqrt();
                    for t in theta_star.iter_mut() {
                        for v in t.iter_mut() {
                            *v += s * self.drift_rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                }
                r
            }
            BanditKind::Mnist { .. } => expected,
        };
        Ok(RewardOutcome {
            reward,
            expected,
            best_expected: best,
        })
    }

    /// Label of the current MNIST context.
    pub fn current_label(&self) -> Option<u8> {
        self.label
    }
}
