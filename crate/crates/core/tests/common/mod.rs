#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use predfilt_core::net::{JacobianPair, Model};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn random_upper(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut m = randn(rng, n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            m[(i, j)] = 0.0;
        }
    }
    m
}

/// Best rank-`d` approximation from nalgebra's symmetric eigensolver.
pub fn dense_best_rank(m: &DMatrix<f64>, d: usize) -> (DMatrix<f64>, Vec<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..m.nrows()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for &k in idx.iter().take(d) {
        let v = eig.eigenvectors.column(k);
        out += v * v.transpose() * eig.eigenvalues[k];
    }
    let vals = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    (out, vals)
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// `y = H ω + L η`, the same Jacobians at every input.
pub struct FixedLinear {
    pub h: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

impl Model for FixedLinear {
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        self.h.nrows()
    }
    fn hidden_len(&self) -> usize {
        self.h.ncols()
    }
    fn last_len(&self) -> usize {
        self.l.ncols()
    }
    fn forward(&self, theta: &[f64], _x: &[f64]) -> DVector<f64> {
        let split = self.h.ncols();
        &self.h * DVector::from_column_slice(&theta[..split])
            + &self.l * DVector::from_column_slice(&theta[split..])
    }
    fn jacobians(&self, theta: &[f64], x: &[f64]) -> (DVector<f64>, JacobianPair) {
        let jp = JacobianPair {
            l_tilde: self.l.clone(),
            h_tilde: self.h.clone(),
        };
        (self.forward(theta, x), jp)
    }
}
