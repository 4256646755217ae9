//! Multilayer perceptrons with a hidden/last-layer parameter partition,
//! forward evaluation and exact layerwise Jacobians.
//!
//! Parameter layout (`FlatParams::theta`): layers in order, each layer stored
//! as its weight matrix (row-major, `out × in`) followed by its bias. The
//! hidden layers form `ω = theta[..split]`; the output layer (weights and
//! bias) forms `η = theta[split..]`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => elu(z),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative, given the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z >= 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Exponential linear unit with unit scale.
#[inline]
pub fn elu(z: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

/// Offsets of one affine layer inside `theta`.
#[derive(Clone, Copy, Debug)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            input_dim,
            hidden_widths,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(invalid("input_dim must be at least 1"));
        }
        if self.output_dim == 0 {
            return Err(invalid("output_dim must be at least 1"));
        }
        if let Some(i) = self.hidden_widths.iter().position(|&w| w == 0) {
            return Err(invalid(format!("hidden width {i} is zero")));
        }
        Ok(())
    }

    fn slots(&self) -> Vec<LayerSlot> {
        let mut out = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_dim;
        let mut off = 0;
        let widths = self
            .hidden_widths
            .iter()
            .copied()
            .chain(std::iter::once(self.output_dim));
        for fan_out in widths {
            let w = off;
            let b = w + fan_in * fan_out;
            off = b + fan_out;
            out.push(LayerSlot {
                fan_in,
                fan_out,
                w,
                b,
            });
            fan_in = fan_out;
        }
        out
    }

    /// `(fan_in, fan_out)` for every affine layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.slots().iter().map(|s| (s.fan_in, s.fan_out)).collect()
    }

    /// Width of the feature vector feeding the output layer.
    pub fn feature_dim(&self) -> usize {
        self.hidden_widths.last().copied().unwrap_or(self.input_dim)
    }

    /// `D_ω`.
    pub fn hidden_len(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut n = 0;
        for &w in &self.hidden_widths {
            n += (fan_in + 1) * w;
            fan_in = w;
        }
        n
    }

    /// `D_η`, including the output bias.
    pub fn last_len(&self) -> usize {
        (self.feature_dim() + 1) * self.output_dim
    }

    /// `D_θ`.
    pub fn param_len(&self) -> usize {
        self.hidden_len() + self.last_len()
    }

    /// Stable 64-bit FNV-1a digest of the architecture, used to tag checkpoints.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.input_dim as u64);
        eat(self.hidden_widths.len() as u64);
        for &w in &self.hidden_widths {
            eat(w as u64);
        }
        eat(self.output_dim as u64);
        eat(match self.activation {
            Activation::Elu => 1,
            Activation::Tanh => 2,
            Activation::Relu => 3,
        });
        h
    }
}

/// Flattened parameters `θ = (ω, η)` with `theta[..split] = ω`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatParams {
    theta: Vec<f64>,
    split: usize,
}

impl FlatParams {
    pub fn new(theta: Vec<f64>, split: usize) -> Result<Self> {
        if split > theta.len() {
            return Err(invalid(format!(
                "split {split} exceeds parameter length {}",
                theta.len()
            )));
        }
        Ok(FlatParams { theta, split })
    }

    pub fn for_spec(spec: &NetworkSpec, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != spec.param_len() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                spec.param_len(),
                theta.len()
            )));
        }
        Self::new(theta, spec.hidden_len())
    }

    pub fn from_parts(hidden: &[f64], last: &[f64]) -> Self {
        let mut theta = Vec::with_capacity(hidden.len() + last.len());
        theta.extend_from_slice(hidden);
        theta.extend_from_slice(last);
        FlatParams {
            theta,
            split: hidden.len(),
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// `ω`.
    pub fn hidden(&self) -> &[f64] {
        &self.theta[..self.split]
    }

    /// `η`.
    pub fn last(&self) -> &[f64] {
        &self.theta[self.split..]
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }
}

/// Structured weights of one network, for inspection and round-tripping.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights {
    /// One `(W, b)` per affine layer, output layer last. `W` is `out × in`.
    pub layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl MlpWeights {
    pub fn unflatten(spec: &NetworkSpec, params: &FlatParams) -> Result<Self> {
        if params.len() != spec.param_len() {
            return Err(invalid("parameter length does not match the spec"));
        }
        let th = params.theta();
        let layers = spec
            .slots()
            .iter()
            .map(|s| {
                let w = DMatrix::from_row_slice(s.fan_out, s.fan_in, &th[s.w..s.b]);
                let b = DVector::from_column_slice(&th[s.b..s.b + s.fan_out]);
                (w, b)
            })
            .collect();
        Ok(MlpWeights { layers })
    }

    pub fn flatten(&self, spec: &NetworkSpec) -> Result<FlatParams> {
        let slots = spec.slots();
        if slots.len() != self.layers.len() {
            return Err(invalid("layer count does not match the spec"));
        }
        let mut theta = vec![0.0; spec.param_len()];
        for (s, (w, b)) in slots.iter().zip(&self.layers) {
            if w.shape() != (s.fan_out, s.fan_in) || b.len() != s.fan_out {
                return Err(invalid("layer shape does not match the spec"));
            }
            for o in 0..s.fan_out {
                for i in 0..s.fan_in {
                    theta[s.w + o * s.fan_in + i] = w[(o, i)];
                }
                theta[s.b + o] = b[o];
            }
        }
        FlatParams::for_spec(spec, theta)
    }
}

/// Per-input Jacobians of the outputs: `l_tilde = ∂f/∂η` (`D_y × D_η`) and
/// `h_tilde = ∂f/∂ω` (`D_y × D_ω`).
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianPair {
    pub l_tilde: DMatrix<f64>,
    pub h_tilde: DMatrix<f64>,
}

impl JacobianPair {
    /// Full Jacobian in `θ` order, i.e. `[h_tilde | l_tilde]`.
    pub fn full(&self) -> DMatrix<f64> {
        let dy = self.l_tilde.nrows();
        let dw = self.h_tilde.ncols();
        let mut j = DMatrix::zeros(dy, dw + self.l_tilde.ncols());
        j.columns_mut(0, dw).copy_from(&self.h_tilde);
        j.columns_mut(dw, self.l_tilde.ncols())
            .copy_from(&self.l_tilde);
        j
    }
}

/// Anything the filters can linearise: a map `(θ, x) ↦ y` that is affine in
/// the trailing `last_len()` parameters.
pub trait Model: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn hidden_len(&self) -> usize;
    fn last_len(&self) -> usize;

    fn param_len(&self) -> usize {
        self.hidden_len() + self.last_len()
    }

    fn forward(&self, theta: &[f64], x: &[f64]) -> DVector<f64>;

    /// Output and Jacobians at `(θ, x)`.
    fn jacobians(&self, theta: &[f64], x: &[f64]) -> (DVector<f64>, JacobianPair);

    /// Output and directional derivative `J(θ, x) · dir`.
    fn jvp(&self, theta: &[f64], x: &[f64], dir: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let (y, jp) = self.jacobians(theta, x);
        let split = self.hidden_len();
        let dw = DVector::from_column_slice(&dir[..split]);
        let de = DVector::from_column_slice(&dir[split..]);
        let dy = &jp.h_tilde * dw + &jp.l_tilde * de;
        (y, dy)
    }
}

/// Activations cached by a forward pass.
struct Trace {
    /// `pre[l]`: pre-activation of hidden layer `l`.
    pre: Vec<Vec<f64>>,
    /// `act[0] = x`, `act[l + 1]`: output of hidden layer `l`.
    act: Vec<Vec<f64>>,
    out: Vec<f64>,
}

fn affine(th: &[f64], s: &LayerSlot, input: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for o in 0..s.fan_out {
        let row = &th[s.w + o * s.fan_in..s.w + (o + 1) * s.fan_in];
        let mut acc = th[s.b + o];
        for (w, a) in row.iter().zip(input) {
            acc += w * a;
        }
        out.push(acc);
    }
}

impl NetworkSpec {
    fn check_args(&self, theta: &[f64], x: &[f64]) {
        assert_eq!(theta.len(), self.param_len(), "parameter length mismatch");
        assert_eq!(x.len(), self.input_dim, "input length mismatch");
    }

    fn trace(&self, theta: &[f64], x: &[f64]) -> Trace {
        self.check_args(theta, x);
        let slots = self.slots();
        let nh = slots.len() - 1;
        let mut pre = Vec::with_capacity(nh);
        let mut act = Vec::with_capacity(nh + 1);
        act.push(x.to_vec());
        for s in &slots[..nh] {
            let mut z = Vec::with_capacity(s.fan_out);
            affine(theta, s, act.last().unwrap(), &mut z);
            let a = z.iter().map(|&v| self.activation.apply(v)).collect();
            pre.push(z);
            act.push(a);
        }
        let mut out = Vec::with_capacity(self.output_dim);
        affine(theta, &slots[nh], act.last().unwrap(), &mut out);
        Trace { pre, act, out }
    }
}

impl Model for NetworkSpec {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn hidden_len(&self) -> usize {
        NetworkSpec::hidden_len(self)
    }

    fn last_len(&self) -> usize {
        NetworkSpec::last_len(self)
    }

    fn forward(&self, theta: &[f64], x: &[f64]) -> DVector<f64> {
        DVector::from_vec(self.trace(theta, x).out)
    }

    fn jacobians(&self, theta: &[f64], x: &[f64]) -> (DVector<f64>, JacobianPair) {
        let tr = self.trace(theta, x);
        let slots = self.slots();
        let nh = slots.len() - 1;
        let last = slots[nh];
        let split = NetworkSpec::hidden_len(self);
        let dy = self.output_dim;
        let feat = tr.act.last().unwrap();

        let mut l_tilde = DMatrix::zeros(dy, last.fan_in * dy + dy);
        for i in 0..dy {
            for (k, &a) in feat.iter().enumerate() {
                l_tilde[(i, last.w - split + i * last.fan_in + k)] = a;
            }
            l_tilde[(i, last.b - split + i)] = 1.0;
        }

        let mut h_tilde = DMatrix::zeros(dy, split);
        let mut row = vec![0.0; split];
        let mut g: Vec<f64> = Vec::new();
        let mut gz: Vec<f64> = Vec::new();
        for i in 0..dy {
            if nh == 0 {
                break;
            }
            // gradient of output i w.r.t. the last hidden activation
            g.clear();
            g.extend_from_slice(&theta[last.w + i * last.fan_in..last.w + (i + 1) * last.fan_in]);
            for l in (0..nh).rev() {
                let s = slots[l];
                gz.clear();
                gz.extend(
                    g.iter()
                        .zip(&tr.pre[l])
                        .map(|(gv, &z)| gv * self.activation.derivative(z)),
                );
                let input = &tr.act[l];
                for o in 0..s.fan_out {
                    let base = s.w + o * s.fan_in;
                    for (k, &a) in input.iter().enumerate() {
                        row[base + k] = gz[o] * a;
                    }
                    row[s.b + o] = gz[o];
                }
                if l > 0 {
                    g.clear();
                    g.resize(s.fan_in, 0.0);
                    for o in 0..s.fan_out {
                        let wrow = &theta[s.w + o * s.fan_in..s.w + (o + 1) * s.fan_in];
                        for (gk, w) in g.iter_mut().zip(wrow) {
                            *gk += gz[o] * w;
                        }
                    }
                }
            }
            for (j, v) in row.iter().enumerate() {
                h_tilde[(i, j)] = *v;
            }
        }
        (DVector::from_vec(tr.out), JacobianPair { l_tilde, h_tilde })
    }

    fn jvp(&self, theta: &[f64], x: &[f64], dir: &[f64]) -> (DVector<f64>, DVector<f64>) {
        self.check_args(theta, x);
        assert_eq!(dir.len(), theta.len(), "direction length mismatch");
        let slots = self.slots();
        let nh = slots.len() - 1;
        let mut a = x.to_vec();
        let mut da = vec![0.0; x.len()];
        let mut z = Vec::new();
        let mut dz = Vec::new();
        for (l, s) in slots.iter().enumerate() {
            affine(theta, s, &a, &mut z);
            // dz = dW a + W da + db
            affine(dir, s, &a, &mut dz);
            for o in 0..s.fan_out {
                let wrow = &theta[s.w + o * s.fan_in..s.w + (o + 1) * s.fan_in];
                dz[o] += wrow.iter().zip(&da).map(|(w, d)| w * d).sum::<f64>();
            }
            if l == nh {
                break;
            }
            a = z.iter().map(|&v| self.activation.apply(v)).collect();
            da = z
                .iter()
                .zip(&dz)
                .map(|(&v, &d)| self.activation.derivative(v) * d)
                .collect();
        }
        (DVector::from_vec(z), DVector::from_vec(dz))
    }
}

/// Forward pass of `spec` at `params`.
pub fn forward(spec: &NetworkSpec, params: &FlatParams, x: &[f64]) -> DVector<f64> {
    Model::forward(spec, params.theta(), x)
}

/// Exact Jacobians of `spec` at `params`.
pub fn jacobians(spec: &NetworkSpec, params: &FlatParams, x: &[f64]) -> JacobianPair {
    Model::jacobians(spec, params.theta(), x).1
}

/// Weights `N(0, 1/fan_in)`, biases zero.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> FlatParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![0.0; spec.param_len()];
    for s in spec.slots() {
        let normal = Normal::new(0.0, (1.0 / s.fan_in as f64).sqrt()).expect("valid std");
        for v in &mut theta[s.w..s.b] {
            *v = normal.sample(&mut rng);
        }
    }
    FlatParams {
        theta,
        split: spec.hidden_len(),
    }
}

/// Selects one output of a multi-output model; used when only the chosen
/// head of a per-action network is observed.
#[derive(Clone, Copy, Debug)]
pub struct OutputSelect<'a, M: Model + ?Sized> {
    pub inner: &'a M,
    pub index: usize,
}

impl<M: Model + ?Sized> Model for OutputSelect<'_, M> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn hidden_len(&self) -> usize {
        self.inner.hidden_len()
    }
    fn last_len(&self) -> usize {
        self.inner.last_len()
    }
    fn forward(&self, theta: &[f64], x: &[f64]) -> DVector<f64> {
        let y = self.inner.forward(theta, x);
        DVector::from_element(1, y[self.index])
    }
    fn jacobians(&self, theta: &[f64], x: &[f64]) -> (DVector<f64>, JacobianPair) {
        let (y, jp) = self.inner.jacobians(theta, x);
        (
            DVector::from_element(1, y[self.index]),
            JacobianPair {
                l_tilde: jp.l_tilde.rows(self.index, 1).into_owned(),
                h_tilde: jp.h_tilde.rows(self.index, 1).into_owned(),
            },
        )
    }
    fn jvp(&self, theta: &[f64], x: &[f64], dir: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let (y, dy) = self.inner.jvp(theta, x, dir);
        (
            DVector::from_element(1, y[self.index]),
            DVector::from_element(1, dy[self.index]),
        )
    }
}

/// Softmax applied to the logits of an inner model.
///
/// Note the composition is no longer affine in the output-layer block; the
/// filters only use the Jacobians at the current mean, so this is fine.
#[derive(Clone, Copy, Debug)]
pub struct SoftmaxHead<'a, M: Model + ?Sized> {
    pub inner: &'a M,
}

pub fn softmax(logits: &[f64]) -> DVector<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    DVector::from_iterator(e.len(), e.into_iter().map(|v| v / s))
}

impl<M: Model + ?Sized> Model for SoftmaxHead<'_, M> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }
    fn hidden_len(&self) -> usize {
        self.inner.hidden_len()
    }
    fn last_len(&self) -> usize {
        self.inner.last_len()
    }
    fn forward(&self, theta: &[f64], x: &[f64]) -> DVector<f64> {
        softmax(self.inner.forward(theta, x).as_slice())
    }
    fn jacobians(&self, theta: &[f64], x: &[f64]) -> (DVector<f64>, JacobianPair) {
        let (logits, jp) = self.inner.jacobians(theta, x);
        let p = softmax(logits.as_slice());
        // d softmax = diag(p) - p pᵀ
        let ds = DMatrix::from_diagonal(&p) - &p * p.transpose();
        (
            p,
            JacobianPair {
                l_tilde: &ds * jp.l_tilde,
                h_tilde: &ds * jp.h_tilde,
            },
        )
    }
    fn jvp(&self, theta: &[f64], x: &[f64], dir: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let (logits, dl) = self.inner.jvp(theta, x, dir);
        let p = softmax(logits.as_slice());
        let dot = p.dot(&dl);
        let dp = p.component_mul(&dl.add_scalar(-dot));
        (p, dp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkSpec {
        NetworkSpec::new(2, vec![3, 4], 2, Activation::Elu).unwrap()
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(1.0), 1.0);
        assert!((elu(-1.0) - (-0.6321205588285577)).abs() < 1e-15);
    }

    #[test]
    fn counts_and_split() {
        let s = small();
        assert_eq!(s.hidden_len(), 3 * 3 + 4 * 4);
        assert_eq!(s.last_len(), 5 * 2);
        let lin = NetworkSpec::new(3, vec![], 2, Activation::Tanh).unwrap();
        let p = init_params(&lin, 1);
        assert_eq!(p.len(), 8);
        assert_eq!(p.split(), 0);
    }

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::new(0, vec![], 1, Activation::Elu).is_err());
        assert!(NetworkSpec::new(1, vec![2, 0], 1, Activation::Elu).is_err());
        assert!(NetworkSpec::new(1, vec![], 0, Activation::Elu).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let s = small();
        assert_eq!(init_params(&s, 7), init_params(&s, 7));
        assert_ne!(init_params(&s, 7), init_params(&s, 8));
    }

    #[test]
    fn linear_readout() {
        let s = NetworkSpec::new(3, vec![], 1, Activation::Elu).unwrap();
        let p = FlatParams::for_spec(&s, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(forward(&s, &p, &[0.7, -2.0, 5.0])[0], 0.7);
        let j = jacobians(&s, &p, &[0.7, -2.0, 5.0]);
        assert_eq!(j.l_tilde.as_slice(), &[0.7, -2.0, 5.0, 1.0]);
        assert_eq!(j.h_tilde.ncols(), 0);
    }

    #[test]
    fn zero_last_layer_gives_zero_output() {
        let s = small();
        let mut p = init_params(&s, 3);
        let split = p.split();
        for v in &mut p.theta_mut()[split..] {
            *v = 0.0;
        }
        assert_eq!(forward(&s, &p, &[0.3, 0.9]).norm(), 0.0);
    }

    #[test]
    fn unflatten_roundtrip() {
        let s = small();
        let p = init_params(&s, 11);
        let w = MlpWeights::unflatten(&s, &p).unwrap();
        assert_eq!(w.flatten(&s).unwrap(), p);
    }

    #[test]
    fn jvp_matches_jacobian() {
        for act in [Activation::Elu, Activation::Tanh, Activation::Relu] {
            let s = NetworkSpec::new(2, vec![5, 3], 3, act).unwrap();
            let p = init_params(&s, 5);
            let dir: Vec<f64> = (0..p.len())
                .map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1)
                .collect();
            let x = [0.4, -1.3];
            let (y, jp) = Model::jacobians(&s, p.theta(), &x);
            let expect = jp.full() * DVector::from_column_slice(&dir);
            let (y2, dy) = s.jvp(p.theta(), &x, &dir);
            assert!((y - y2).norm() < 1e-14);
            assert!((expect - dy).norm() < 1e-12);
        }
    }

    #[test]
    fn softmax_head_jacobian_matches_jvp() {
        let s = NetworkSpec::new(2, vec![4], 3, Activation::Tanh).unwrap();
        let head = SoftmaxHead { inner: &s };
        let p = init_params(&s, 2);
        let dir: Vec<f64> = (0..p.len()).map(|i| (i as f64).sin()).collect();
        let (_, jp) = head.jacobians(p.theta(), &[0.2, 0.5]);
        let (_, dy) = head.jvp(p.theta(), &[0.2, 0.5], &dir);
        assert!((jp.full() * DVector::from_column_slice(&dir) - dy).norm() < 1e-12);
    }

    #[test]
    fn output_select_picks_row() {
        let s = small();
        let p = init_params(&s, 4);
        let sel = OutputSelect {
            inner: &s,
            index: 1,
        };
        let (y, jp) = sel.jacobians(p.theta(), &[0.1, 0.2]);
        let (yf, jf) = Model::jacobians(&s, p.theta(), &[0.1, 0.2]);
        assert_eq!(y[0], yf[1]);
        assert_eq!(jp.full().row(0), jf.full().row(1));
    }
}
