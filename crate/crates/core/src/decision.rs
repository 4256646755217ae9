//! Action selection from beliefs: predictive sampling, Thompson sampling,
//! ε-greedy, expected improvement, and low-discrepancy BO proposals.
//!
//! Ties are broken by the lowest action index everywhere.

use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::filters::{sample_function, Belief, GaussianPredictive, NoiseConfig};
use crate::net::Model;

/// Axis-aligned box with a candidate budget for BO proposals.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub candidate_count: usize,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, candidate_count: usize) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(invalid("box bounds must be nonempty and of equal length"));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l >= u {
                return Err(invalid(format!("bad bounds [{l}, {u}] in dimension {i}")));
            }
        }
        if candidate_count == 0 {
            return Err(invalid("candidate_count must be at least 1"));
        }
        Ok(BoxDomain {
            lower,
            upper,
            candidate_count,
        })
    }

    pub fn unit(dim: usize, candidate_count: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim], candidate_count)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ActionSet {
    /// Action `a` is scored by the scalar model at `x̂ = (context, features[a])`.
    Discrete(Vec<Vec<f64>>),
    /// Action `a` is output `a` of a multi-output model evaluated at the context.
    Heads(usize),
    Box(BoxDomain),
}

impl ActionSet {
    pub fn len(&self) -> usize {
        match self {
            ActionSet::Discrete(v) => v.len(),
            ActionSet::Heads(k) => *k,
            ActionSet::Box(b) => b.candidate_count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model input for a discrete action.
pub fn joint_input(context: &[f64], action: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(context.len() + action.len());
    x.extend_from_slice(context);
    x.extend_from_slice(action);
    x
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn discrete_only(actions: &ActionSet) -> Result<()> {
    match actions {
        ActionSet::Box(_) => Err(invalid("policy needs a discrete action set")),
        a if a.is_empty() => Err(invalid("empty action set")),
        _ => Ok(()),
    }
}

fn check_heads<M: Model + ?Sized>(model: &M, k: usize) -> Result<()> {
    if model.output_dim() != k {
        return Err(invalid(format!(
            "{k} heads requested from a model with {} outputs",
            model.output_dim()
        )));
    }
    Ok(())
}

/// Predictive sampling: one independent predictive draw per action, then
/// argmax. Returns the chosen action and the sampled rewards.
pub fn predictive_sample_action<M: Model + ?Sized, R: Rng + ?Sized>(
    belief: &Belief,
    model: &M,
    context: &[f64],
    actions: &ActionSet,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<(usize, Vec<f64>)> {
    discrete_only(actions)?;
    let samples: Vec<f64> = match actions {
        ActionSet::Discrete(feats) => feats
            .iter()
            .map(|a| {
                belief
                    .predictive(model, &joint_input(context, a), noise)
                    .sample(rng)[0]
            })
            .collect(),
        ActionSet::Heads(k) => {
            check_heads(model, *k)?;
            // marginal of each head, drawn independently
            let pred = belief.predictive(model, context, noise);
            (0..*k)
                .map(|a| {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    pred.mean[a] + pred.std(a) * z
                })
                .collect()
        }
        ActionSet::Box(_) => unreachable!(),
    };
    Ok((argmax(&samples), samples))
}

/// Thompson sampling: one coherent function draw evaluated at every action.
pub fn thompson_sample_action<M: Model + ?Sized, R: Rng + ?Sized>(
    belief: &Belief,
    model: &M,
    context: &[f64],
    actions: &ActionSet,
    rng: &mut R,
) -> Result<(usize, Vec<f64>)> {
    discrete_only(actions)?;
    let f = sample_function(belief, rng);
    let values: Vec<f64> = match actions {
        ActionSet::Discrete(feats) => feats
            .iter()
            .map(|a| f.eval(model, &joint_input(context, a))[0])
            .collect(),
        ActionSet::Heads(k) => {
            check_heads(model, *k)?;
            f.eval(model, context).as_slice().to_vec()
        }
        ActionSet::Box(_) => unreachable!(),
    };
    Ok((argmax(&values), values))
}

/// Greedy on predictive means with probability `1 − ε`, uniform otherwise.
pub fn epsilon_greedy_action<M: Model + ?Sized, R: Rng + ?Sized>(
    belief: &Belief,
    model: &M,
    context: &[f64],
    actions: &ActionSet,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    discrete_only(actions)?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(invalid(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    let k = actions.len();
    if rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..k));
    }
    let means: Vec<f64> = match actions {
        ActionSet::Discrete(feats) => feats
            .iter()
            .map(|a| belief.predictive_mean(model, &joint_input(context, a))[0])
            .collect(),
        ActionSet::Heads(k) => {
            check_heads(model, *k)?;
            belief.predictive_mean(model, context).as_slice().to_vec()
        }
        ActionSet::Box(_) => unreachable!(),
    };
    Ok(argmax(&means))
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Closed-form Gaussian expected improvement over `best` for a maximisation
/// problem: `(μ − y*) Φ(z) + σ φ(z)`, `z = (μ − y*) / σ`.
pub fn expected_improvement_scalar(mu: f64, sigma: f64, best: f64) -> f64 {
    let gap = mu - best;
    if sigma <= 0.0 {
        return gap.max(0.0);
    }
    let n = std_normal();
    let z = gap / sigma;
    (gap * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

/// Expected improvement of the first output of `pred`.
pub fn expected_improvement(pred: &GaussianPredictive, best_so_far: f64) -> f64 {
    expected_improvement_scalar(pred.mean[0], pred.std(0), best_so_far)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoStrategy {
    Ts,
    Ei,
}

pub const MAX_HALTON_DIM: usize = 64;

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes
            .iter()
            .take_while(|&&p| p * p <= c)
            .all(|&p| c % p != 0)
        {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

/// Van der Corput radical inverse of `i` in `base`.
pub fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

/// `n` Halton points scaled to `domain`. Dimension `j` uses the `j`-th prime
/// as base; point `k` uses index `seed + k + 1`, so `seed = 0` starts at
/// `1/2, 1/4, 3/4, 1/8, …` in the first dimension.
pub fn lowdisc_candidates(domain: &BoxDomain, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let dim = domain.dim();
    if dim > MAX_HALTON_DIM {
        return Err(Error::UnsupportedDimension {
            dim,
            max: MAX_HALTON_DIM,
        });
    }
    if n == 0 {
        return Err(invalid("need at least one candidate"));
    }
    let primes = first_primes(dim);
    Ok((0..n as u64)
        .map(|k| {
            let idx = seed + k + 1;
            (0..dim)
                .map(|j| {
                    let u = radical_inverse(idx, primes[j]);
                    let (l, h) = (domain.lower[j], domain.upper[j]);
                    (l + (h - l) * u).clamp(l, h)
                })
                .collect()
        })
        .collect())
}

/// Projected gradient ascent on a sampled function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refinement {
    pub steps: usize,
    pub step_size: f64,
    /// Central-difference half-width.
    pub fd_step: f64,
}

impl Default for Refinement {
    fn default() -> Self {
        Refinement {
            steps: 50,
            step_size: 0.01,
            fd_step: 1e-5,
        }
    }
}

/// Fixed candidate set plus the proposal rule.
#[derive(Clone, Debug)]
pub struct BoProposer {
    pub domain: BoxDomain,
    pub candidates: Vec<Vec<f64>>,
    pub refinement: Option<Refinement>,
}

impl BoProposer {
    pub fn new(domain: BoxDomain, seed: u64, refinement: Option<Refinement>) -> Result<Self> {
        let candidates = lowdisc_candidates(&domain, domain.candidate_count, seed)?;
        Ok(BoProposer {
            domain,
            candidates,
            refinement,
        })
    }

    /// Next query point. Thompson sampling maximises one coherent draw over
    /// the candidates (then refines); EI maximises the closed-form EI.
    pub fn propose<M: Model + ?Sized, R: Rng + ?Sized>(
        &self,
        belief: &Belief,
        model: &M,
        strategy: BoStrategy,
        best_so_far: f64,
        noise: &NoiseConfig,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        match strategy {
            BoStrategy::Ts => {
                let f = sample_function(belief, rng);
                let vals: Vec<f64> = self
                    .candidates
                    .iter()
                    .map(|x| f.eval(model, x)[0])
                    .collect();
                let mut x = self.candidates[argmax(&vals)].clone();
                if let Some(r) = self.refinement {
                    let mut best_val = vals[argmax(&vals)];
                    let mut best_x = x.clone();
                    let mut probe = x.clone();
                    for _ in 0..r.steps {
                        let mut grad = vec![0.0; x.len()];
                        for j in 0..x.len() {
                            probe.copy_from_slice(&x);
                            probe[j] = x[j] + r.fd_step;
                            let up = f.eval(model, &probe)[0];
                            probe[j] = x[j] - r.fd_step;
                            let down = f.eval(model, &probe)[0];
                            grad[j] = (up - down) / (2.0 * r.fd_step);
                        }
                        for (v, g) in x.iter_mut().zip(&grad) {
                            *v += r.step_size * g;
                        }
                        self.domain.clamp(&mut x);
                        let val = f.eval(model, &x)[0];
                        if val > best_val {
                            best_val = val;
                            best_x.copy_from_slice(&x);
                        }
                    }
                    x = best_x;
                }
                Ok(x)
            }
            BoStrategy::Ei => {
                let vals: Vec<f64> = self
                    .candidates
                    .iter()
                    .map(|x| expected_improvement(&belief.predictive(model, x, noise), best_so_far))
                    .collect();
                Ok(self.candidates[argmax(&vals)].clone())
            }
        }
    }
}

/// One-shot proposal with a freshly generated candidate set.
#[allow(clippy::too_many_arguments)]
pub fn bo_propose<M: Model + ?Sized, R: Rng + ?Sized>(
    belief: &Belief,
    model: &M,
    domain: &BoxDomain,
    strategy: BoStrategy,
    best_so_far: f64,
    noise: &NoiseConfig,
    seed: u64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    BoProposer::new(domain.clone(), seed, None)?.propose(
        belief,
        model,
        strategy,
        best_so_far,
        noise,
        rng,
    )
}
