mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use predfilt_core::decision::{
    bo_propose, epsilon_greedy_action, expected_improvement_scalar, lowdisc_candidates,
    predictive_sample_action, thompson_sample_action, ActionSet, BoProposer, BoStrategy, BoxDomain,
    Refinement,
};
use predfilt_core::filters::{Belief, DenseBelief, HiLoFiBelief, NoiseConfig};
use predfilt_core::net::{init_params, Activation, NetworkSpec};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Beliefs over a last-layer-only 2-head model `y = [η₀, η₁]`, i.e. independent
/// arm means with the given variances.
fn two_arm_belief(means: [f64; 2], vars: [f64; 2]) -> (Belief, FixedLinear) {
    let model = FixedLinear {
        h: DMatrix::zeros(2, 0),
        l: DMatrix::identity(2, 2),
    };
    let cov = DMatrix::from_diagonal(&DVector::from_row_slice(&vars));
    let b = DenseBelief::new(DVector::from_row_slice(&means), cov, 0).unwrap();
    (Belief::Dense(b), model)
}

#[test]
fn predictive_sampling_win_rate_matches_gaussian_race() {
    let (b, model) = two_arm_belief([0.0, 0.3], [1.0, 0.5]);
    let noise = NoiseConfig::isotropic(2, 0.5, 0.0, 0.0).unwrap();
    let mut g = rng(200);
    let n = 20_000;
    let wins = (0..n)
        .filter(|_| {
            predictive_sample_action(&b, &model, &[0.0], &ActionSet::Heads(2), &noise, &mut g)
                .unwrap()
                .0
                == 1
        })
        .count();
    // P(Y₁ > Y₀), Y₀ ~ N(0, 1.25), Y₁ ~ N(0.3, 0.75)
    let z = 0.3 / 2.0f64.sqrt();
    let p = 0.5 * (1.0 + statrs::function::erf::erf(z / 2.0f64.sqrt()));
    let freq = wins as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((freq - p).abs() <= 4.0 * se, "{freq} vs {p}");
}

#[test]
fn zero_uncertainty_makes_every_policy_greedy() {
    let (b, model) = two_arm_belief([0.1, 0.7], [0.0, 0.0]);
    let noise = NoiseConfig::isotropic(2, 0.0, 0.0, 0.0).unwrap();
    let mut g = rng(201);
    let acts = ActionSet::Heads(2);
    for _ in 0..50 {
        assert_eq!(
            predictive_sample_action(&b, &model, &[0.0], &acts, &noise, &mut g)
                .unwrap()
                .0,
            1
        );
        assert_eq!(
            thompson_sample_action(&b, &model, &[0.0], &acts, &mut g)
                .unwrap()
                .0,
            1
        );
        assert_eq!(
            epsilon_greedy_action(&b, &model, &[0.0], &acts, 0.0, &mut g).unwrap(),
            1
        );
    }
}

#[test]
fn epsilon_greedy_explores_at_the_stated_rate() {
    let (b, model) = two_arm_belief([0.0, 1.0], [0.1, 0.1]);
    let mut g = rng(202);
    let n = 20_000;
    let eps = 0.2;
    let zeros = (0..n)
        .filter(|_| {
            epsilon_greedy_action(&b, &model, &[0.0], &ActionSet::Heads(2), eps, &mut g).unwrap()
                == 0
        })
        .count();
    let p = eps / 2.0;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((zeros as f64 / n as f64 - p).abs() <= 4.0 * se);
    assert!(epsilon_greedy_action(&b, &model, &[0.0], &ActionSet::Heads(2), 1.5, &mut g).is_err());
}

#[test]
fn thompson_draw_is_coherent_across_actions() {
    // identical arms driven by the same parameter: one draw gives equal values
    let model = FixedLinear {
        h: DMatrix::zeros(2, 0),
        l: DMatrix::from_element(2, 1, 1.0),
    };
    let b = Belief::Dense(DenseBelief::new(DVector::zeros(1), DMatrix::identity(1, 1), 0).unwrap());
    let mut g = rng(203);
    for _ in 0..20 {
        let (a, vals) =
            thompson_sample_action(&b, &model, &[0.0], &ActionSet::Heads(2), &mut g).unwrap();
        assert_eq!(vals[0], vals[1]);
        assert_eq!(a, 0);
    }
}

#[test]
fn discrete_actions_use_joint_inputs() {
    let spec = NetworkSpec::new(3, vec![4], 1, Activation::Elu).unwrap();
    let p = init_params(&spec, 204);
    let b = Belief::HiLoFi(HiLoFiBelief::from_prior(&p, 0.0, 0.0, 2).unwrap());
    let noise = NoiseConfig::isotropic(1, 0.0, 0.0, 0.0).unwrap();
    let feats = vec![vec![0.0], vec![1.0], vec![-1.0]];
    let means: Vec<f64> = feats
        .iter()
        .map(|a| b.predictive_mean(&spec, &[0.2, 0.3, a[0]])[0])
        .collect();
    let best = (0..3).fold(0, |i, j| if means[j] > means[i] { j } else { i });
    let mut g = rng(205);
    let acts = ActionSet::Discrete(feats);
    let (a, vals) =
        predictive_sample_action(&b, &spec, &[0.2, 0.3], &acts, &noise, &mut g).unwrap();
    assert_eq!(a, best);
    assert_eq!(vals, means);
}

#[test]
fn expected_improvement_matches_monte_carlo() {
    let mut g = rng(206);
    for _ in 0..20 {
        let mu: f64 = g.random_range(-2.0..2.0);
        let sigma: f64 = g.random_range(0.1..2.0);
        let best: f64 = g.random_range(-2.0..2.0);
        let d = Normal::new(mu, sigma).unwrap();
        let n = 400_000;
        let draws: Vec<f64> = (0..n).map(|_| (d.sample(&mut g) - best).max(0.0)).collect();
        let mc = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mc).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let exact = expected_improvement_scalar(mu, sigma, best);
        assert!(
            (mc - exact).abs() <= (0.01 * exact).max(4.0 * se).max(1e-12),
            "{mc} vs {exact}"
        );
        assert!(exact >= 0.0);
    }
}

#[test]
fn halton_points_stay_in_random_boxes() {
    let mut g = rng(207);
    for _ in 0..1000 {
        let dim = g.random_range(1..=8);
        let lower: Vec<f64> = (0..dim).map(|_| g.random_range(-10.0..10.0)).collect();
        let upper: Vec<f64> = lower
            .iter()
            .map(|l| l + g.random_range(1e-3..5.0))
            .collect();
        let dom = BoxDomain::new(lower, upper, 16).unwrap();
        let seed = g.random_range(0..1000);
        for p in lowdisc_candidates(&dom, 16, seed).unwrap() {
            for ((x, lo), hi) in p.iter().zip(&dom.lower).zip(&dom.upper) {
                assert!(x >= lo && x <= hi);
            }
        }
    }
}

#[test]
fn bo_proposals_stay_in_the_box() {
    let spec = NetworkSpec::new(2, vec![8], 1, Activation::Elu).unwrap();
    let p = init_params(&spec, 208);
    let b = Belief::HiLoFi(HiLoFiBelief::from_prior(&p, 1.0, 1.0, 4).unwrap());
    let noise = NoiseConfig::isotropic(1, 0.1, 0.0, 0.0).unwrap();
    let dom = BoxDomain::new(vec![-1.0, 2.0], vec![0.0, 3.0], 64).unwrap();
    let prop = BoProposer::new(dom.clone(), 0, Some(Refinement::default())).unwrap();
    let mut g = rng(209);
    for strategy in [BoStrategy::Ts, BoStrategy::Ei] {
        for _ in 0..20 {
            let x = prop
                .propose(&b, &spec, strategy, 0.0, &noise, &mut g)
                .unwrap();
            assert!(x[0] >= -1.0 && x[0] <= 0.0 && x[1] >= 2.0 && x[1] <= 3.0);
        }
    }
    let x = bo_propose(&b, &spec, &dom, BoStrategy::Ei, 0.0, &noise, 0, &mut g).unwrap();
    assert_eq!(x.len(), 2);
}

#[test]
fn policies_reject_box_actions() {
    let (b, model) = two_arm_belief([0.0, 0.0], [1.0, 1.0]);
    let noise = NoiseConfig::isotropic(2, 0.1, 0.0, 0.0).unwrap();
    let acts = ActionSet::Box(BoxDomain::unit(2, 4).unwrap());
    let mut g = rng(210);
    assert!(predictive_sample_action(&b, &model, &[0.0], &acts, &noise, &mut g).is_err());
    assert!(thompson_sample_action(&b, &model, &[0.0], &ActionSet::Heads(3), &mut g).is_err());
}
