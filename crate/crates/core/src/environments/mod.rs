//! Reward and data generators.

mod bandit;
mod bo;
mod mnist;

pub use bandit::{BanditEnv, BanditKind, RewardOutcome};
pub use bo::{ackley, branin, hartmann6, BoFunction, BoKind, HARTMANN6_ARGMAX};
pub use mnist::{
    find_mnist_train, load_mnist_idx, parse_images, parse_labels, write_mnist_idx, MnistDataset,
    IMAGES_MAGIC, LABELS_MAGIC,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::rng::{stream_rng, ENV_STREAM};

/// Points per input cluster of [`inbetween_dataset`].
pub const INBETWEEN_CLUSTER_SIZE: usize = 60;

/// Noise-free target of [`inbetween_dataset`].
pub fn inbetween_target(x: f64) -> f64 {
    (2.0 * x).sin() + 0.2 * x
}

/// One-dimensional regression data with a gap: 60 inputs uniform on
/// `[-3.2, -1.2]`, 60 on `[1.2, 3.2]`, `y = sin(2x) + 0.2x + N(0, 0.1²)`.
pub fn inbetween_dataset(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream_rng(seed, ENV_STREAM);
    let noise = Normal::new(0.0, 0.1).expect("valid std");
    let mut xs = Vec::with_capacity(2 * INBETWEEN_CLUSTER_SIZE);
    for (lo, hi) in [(-3.2, -1.2), (1.2, 3.2)] {
        for _ in 0..INBETWEEN_CLUSTER_SIZE {
            xs.push(rng.random_range(lo..=hi));
        }
    }
    let ys = xs
        .iter()
        .map(|&x| inbetween_target(x) + noise.sample(&mut rng))
        .collect();
    (xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inbetween_gap_and_determinism() {
        let (xs, ys) = inbetween_dataset(4);
        assert_eq!(xs.len(), 120);
        assert!(xs.iter().all(|x| x.abs() >= 1.2 && x.abs() <= 3.2));
        assert_eq!(inbetween_dataset(4), (xs.clone(), ys.clone()));
        let resid: Vec<f64> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| y - inbetween_target(*x))
            .collect();
        let mean = resid.iter().sum::<f64>() / 120.0;
        let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 119.0).sqrt();
        assert!((0.07..=0.13).contains(&sd), "{sd}");
    }
}
