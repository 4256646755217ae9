//! Black-box test functions on the unit box, oriented for maximisation.

use std::f64::consts::{E, PI};

use crate::error::{invalid, Result};
use crate::net::{init_params, Activation, FlatParams, Model, NetworkSpec};

#[derive(Clone, Debug, PartialEq)]
pub enum BoKind {
    Ackley {
        dim: usize,
    },
    Branin,
    Hartmann6,
    /// Random tanh network `dim → 64 → 64 → 1` with seed-determined weights.
    DrawNn {
        dim: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug)]
pub struct BoFunction {
    pub kind: BoKind,
    draw: Option<(NetworkSpec, FlatParams)>,
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

/// Known optimiser of Hartmann-6 on `[0, 1]^6`.
pub const HARTMANN6_ARGMAX: [f64; 6] = [0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573];

impl BoFunction {
    pub fn new(kind: BoKind) -> Result<Self> {
        let draw = match &kind {
            BoKind::Ackley { dim } if *dim == 0 => {
                return Err(invalid("Ackley needs at least one dimension"))
            }
            BoKind::DrawNn { dim, seed } => {
                let spec = NetworkSpec::new(*dim, vec![64, 64], 1, Activation::Tanh)?;
                let params = init_params(&spec, *seed);
                Some((spec, params))
            }
            _ => None,
        };
        Ok(BoFunction { kind, draw })
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            BoKind::Ackley { dim } | BoKind::DrawNn { dim, .. } => dim,
            BoKind::Branin => 2,
            BoKind::Hartmann6 => 6,
        }
    }

    /// Global maximum, where known.
    pub fn max_value(&self) -> Option<f64> {
        match self.kind {
            BoKind::Ackley { .. } => Some(0.0),
            BoKind::Branin => Some(-0.397_887_357_729_738),
            BoKind::Hartmann6 => Some(3.322_368_011_391_339),
            BoKind::DrawNn { .. } => None,
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            BoKind::Ackley { dim } => format!("ackley{dim}"),
            BoKind::Branin => "branin".into(),
            BoKind::Hartmann6 => "hartmann6".into(),
            BoKind::DrawNn { dim, .. } => format!("drawnn{dim}"),
        }
    }

    /// Value at `x ∈ [0, 1]^D`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(invalid(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                x.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid(format!("coordinate {i} = {} outside [0, 1]", x[i])));
        }
        Ok(match &self.kind {
            BoKind::Ackley { .. } => {
                let z: Vec<f64> = x.iter().map(|v| -32.768 + 65.536 * v).collect();
                -ackley(&z)
            }
            BoKind::Branin => -branin(-5.0 + 15.0 * x[0], 15.0 * x[1]),
            BoKind::Hartmann6 => -hartmann6(x),
            BoKind::DrawNn { .. } => {
                let (spec, params) = self.draw.as_ref().expect("network built in new");
                spec.forward(params.theta(), x)[0]
            }
        })
    }
}

pub fn ackley(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    let sq = z.iter().map(|v| v * v).sum::<f64>() / n;
    let cs = z.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
    -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + E
}

pub fn branin(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

pub fn hartmann6(x: &[f64]) -> f64 {
    -(0..4)
        .map(|i| {
            let s: f64 = (0..6)
                .map(|j| HARTMANN_A[i][j] * (x[j] - HARTMANN_P[i][j]).powi(2))
                .sum();
            HARTMANN_ALPHA[i] * (-s).exp()
        })
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ackley_centre_is_zero() {
        let f = BoFunction::new(BoKind::Ackley { dim: 3 }).unwrap();
        assert!(f.eval(&[0.5, 0.5, 0.5]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn branin_minimisers() {
        let f = BoFunction::new(BoKind::Branin).unwrap();
        for (a, b) in [(-PI, 12.275), (PI, 2.275), (9.42478, 2.475)] {
            let x = [(a + 5.0) / 15.0, b / 15.0];
            assert!((f.eval(&x).unwrap() + 0.397887).abs() < 1e-5);
        }
    }

    #[test]
    fn hartmann_optimum() {
        let f = BoFunction::new(BoKind::Hartmann6).unwrap();
        assert!((f.eval(&HARTMANN6_ARGMAX).unwrap() - 3.32237).abs() < 1e-4);
    }

    #[test]
    fn rejects_outside_box() {
        let f = BoFunction::new(BoKind::Branin).unwrap();
        assert!(f.eval(&[1.2, 0.0]).is_err());
        assert!(f.eval(&[0.2]).is_err());
    }

    #[test]
    fn drawnn_is_deterministic() {
        let a = BoFunction::new(BoKind::DrawNn { dim: 5, seed: 1 }).unwrap();
        let b = BoFunction::new(BoKind::DrawNn { dim: 5, seed: 1 }).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(a.eval(&x).unwrap(), b.eval(&x).unwrap());
    }
}
