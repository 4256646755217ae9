//! Low-rank square-root Kalman filters (LRKF, HiLoFi, LoLoFi) for online
//! learning of neural networks, their posterior predictives, and
//! predictive-sampling decision policies for bandits and Bayesian optimisation.
//!
//! ```
//! use predfilt_core::prelude::*;
//!
//! let spec = NetworkSpec::new(1, vec![8], 1, Activation::Elu).unwrap();
//! let params = init_params(&spec, 0);
//! let belief = HiLoFiBelief::from_prior(&params, 1.0, 1.0, 4).unwrap();
//! let noise = NoiseConfig::isotropic(1, 0.1, 0.0, 0.0).unwrap();
//! let next = hilofi_step(&belief, &spec, &[0.3], &[0.5], &noise).unwrap();
//! let pred = Belief::HiLoFi(next).predictive(&spec, &[0.3], &noise);
//! assert!(pred.cov[(0, 0)] > 0.0);
//! ```

// `!(x >= 0.0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod decision;
pub mod environments;
pub mod error;
pub mod filters;
pub mod linalg;
pub mod net;
pub mod rng;

pub use error::{Error, Result};

/// The types most callers need.
pub mod prelude {
    pub use crate::decision::{
        epsilon_greedy_action, expected_improvement, predictive_sample_action,
        thompson_sample_action, ActionSet, BoProposer, BoStrategy, BoxDomain,
    };
    pub use crate::error::{Error, Result};
    pub use crate::filters::{
        dense_predict_update, hilofi_step, lolofi_step, lrkf_step, predictive, sample_function,
        Belief, DenseBelief, FilterKind, FilterOptions, GaussianPredictive, HiLoFiBelief,
        LoLoFiBelief, LrkfBelief, NoiseConfig, PriorConfig, Projection,
    };
    pub use crate::linalg::{LowRankFactor, UpperTri};
    pub use crate::net::{
        forward, init_params, jacobians, Activation, FlatParams, JacobianPair, Model, NetworkSpec,
    };
}
