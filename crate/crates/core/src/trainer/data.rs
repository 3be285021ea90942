//! Seeded two-class Gaussian datasets.

use rand::Rng;
use rand_distr::StandardNormal;

use super::TrainerError;
use crate::seed::stream_rng;

pub const DEFAULT_DIM: usize = 4;

/// Labeled feature vectors: two Gaussian clusters whose per-coordinate
/// means sit `separation` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub separation: f64,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// (negative, positive) label counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let positives = self.labels.iter().filter(|l| **l).count();
        (self.labels.len() - positives, positives)
    }

    pub fn has_both_classes(&self) -> bool {
        let (neg, pos) = self.class_counts();
        neg > 0 && pos > 0
    }
}

/// [`make_dataset_dim`] at the default dimensionality.
pub fn make_dataset(seed: u64, n: usize, separation: f64) -> Result<SyntheticDataset, TrainerError> {
    make_dataset_dim(seed, n, separation, DEFAULT_DIM)
}

/// Builds `n` samples, labels alternating so the classes split evenly.
/// Class `false` draws from N(-separation/2, 1) per coordinate, class
/// `true` from N(+separation/2, 1).
pub fn make_dataset_dim(
    seed: u64,
    n: usize,
    separation: f64,
    dim: usize,
) -> Result<SyntheticDataset, TrainerError> {
    if n < 2 {
        return Err(TrainerError::TooFewSamples(n));
    }
    assert!(dim >= 1, "feature dimensionality must be at least 1");
    let mut rng = stream_rng(seed, "dataset", 0);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2 == 1;
        let mean = if label { separation / 2.0 } else { -separation / 2.0 };
        let x = (0..dim)
            .map(|_| mean + rng.sample::<f64, _>(StandardNormal))
            .collect();
        features.push(x);
        labels.push(label);
    }
    Ok(SyntheticDataset {
        features,
        labels,
        separation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_hundred_samples_split_evenly() {
        let dataset = make_dataset(7, 500, 4.0).unwrap();
        assert_eq!(dataset.class_counts(), (250, 250));
        assert_eq!(dataset.dim(), DEFAULT_DIM);
    }

    #[test]
    fn same_seed_reproduces_the_dataset() {
        let a = make_dataset(7, 100, 4.0).unwrap();
        let b = make_dataset(7, 100, 4.0).unwrap();
        assert_eq!(a, b);
        let c = make_dataset(8, 100, 4.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_small_dataset_is_rejected() {
        assert_eq!(
            make_dataset(1, 1, 4.0).unwrap_err(),
            TrainerError::TooFewSamples(1)
        );
    }

    #[test]
    fn cluster_means_reflect_separation() {
        let dataset = make_dataset_dim(3, 10_000, 4.0, 2).unwrap();
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        for (x, label) in dataset.features.iter().zip(&dataset.labels) {
            let class = usize::from(*label);
            sums[class] += x[0];
            counts[class] += 1;
        }
        let neg_mean = sums[0] / counts[0] as f64;
        let pos_mean = sums[1] / counts[1] as f64;
        assert!((neg_mean + 2.0).abs() < 0.1, "negative mean {neg_mean}");
        assert!((pos_mean - 2.0).abs() < 0.1, "positive mean {pos_mean}");
    }
}
