//! Fixtures shared by the benchmarks in `benches/`.

use predfilt_core::prelude::*;
use predfilt_core::rng::{stream_rng, AGENT_STREAM};
use rand::Rng;

/// A `2-width-width-outputs` ELU network with a warmed-up belief.
pub struct Fixture {
    pub spec: NetworkSpec,
    pub belief: Belief,
    pub noise: NoiseConfig,
    pub inputs: Vec<[f64; 2]>,
}

impl Fixture {
    pub fn new(kind: FilterKind, width: usize, outputs: usize, rank: usize) -> Self {
        let spec = NetworkSpec::new(2, vec![width, width], outputs, Activation::Elu).unwrap();
        let params = init_params(&spec, 0);
        let prior = PriorConfig {
            var_last: 0.1,
            var_hidden: 0.1,
            rank_hidden: rank,
            rank_last: rank.min(spec.last_len()),
            rank,
        };
        let mut belief = Belief::from_prior(kind, &params, &prior).unwrap();
        let noise = NoiseConfig::isotropic(outputs, 0.01, 1e-6, 1e-6).unwrap();
        let mut rng = stream_rng(0, AGENT_STREAM);
        let inputs: Vec<[f64; 2]> = (0..16).map(|_| [rng.random(), rng.random()]).collect();
        let y = vec![0.5; outputs];
        for x in &inputs[..4] {
            belief = belief
                .step(&spec, x, &y, &noise, &FilterOptions::default())
                .unwrap();
        }
        Fixture {
            spec,
            belief,
            noise,
            inputs,
        }
    }

    pub fn step(&self, i: usize) -> Belief {
        let x = &self.inputs[i % self.inputs.len()];
        let y = vec![0.5; self.spec.output_dim()];
        self.belief
            .step(&self.spec, x, &y, &self.noise, &FilterOptions::default())
            .unwrap()
    }
}
