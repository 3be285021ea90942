//! Full-batch gradient-descent logistic classifier.

use rand::seq::SliceRandom;

use super::{SyntheticDataset, TrainerError};
use crate::institution::ModelParams;
use crate::seed::stream_rng;

pub const DEFAULT_STEP_SIZE: f64 = 0.1;
pub const DEFAULT_MAX_EPOCHS: u32 = 500;

/// Result of one local training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Holdout accuracy at the stopping epoch; recomputable via
    /// [`holdout_split`] and [`accuracy_on`].
    pub achieved_accuracy: f64,
    pub epochs_used: u32,
    /// Training log-loss before the first step and after each epoch.
    pub loss_history: Vec<f64>,
}

/// Seeded 80/20 shuffle split; the holdout is at least one sample.
pub fn holdout_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, "train-split", 0);
    indices.shuffle(&mut rng);
    let holdout_len = (n / 5).max(1);
    let holdout = indices[..holdout_len].to_vec();
    let train = indices[holdout_len..].to_vec();
    (train, holdout)
}

fn decision_value(weights: &[f64], x: &[f64]) -> f64 {
    let dim = x.len();
    let mut z = weights[dim];
    for (w, v) in weights[..dim].iter().zip(x) {
        z += w * v;
    }
    z
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fraction of samples whose predicted class matches the label; the
/// decision rule is `z >= 0` predicts the positive class.
pub fn accuracy_on(params: &ModelParams, features: &[Vec<f64>], labels: &[bool]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = features
        .iter()
        .zip(labels)
        .filter(|(x, label)| (decision_value(&params.weights, x) >= 0.0) == **label)
        .count();
    hits as f64 / labels.len() as f64
}

/// Mean logistic loss over the given samples.
pub fn log_loss(params: &ModelParams, features: &[Vec<f64>], labels: &[bool]) -> f64 {
    let mut total = 0.0;
    for (x, label) in features.iter().zip(labels) {
        let p = sigmoid(decision_value(&params.weights, x)).clamp(1e-12, 1.0 - 1e-12);
        total -= if *label { p.ln() } else { (1.0 - p).ln() };
    }
    total / labels.len().max(1) as f64
}

/// Trains a logistic classifier on a seeded 80/20 split until the holdout
/// accuracy reaches `target_accuracy` or `max_epochs` pass.
///
/// The holdout is scored before the first step, so an already-satisfied
/// target stops at epoch 0. Deterministic for a fixed dataset and seed.
pub fn train_toy(
    dataset: &SyntheticDataset,
    target_accuracy: f64,
    max_epochs: u32,
    seed: u64,
) -> Result<TrainOutcome, TrainerError> {
    if dataset.len() < 2 {
        return Err(TrainerError::TooFewSamples(dataset.len()));
    }
    if !dataset.has_both_classes() {
        return Err(TrainerError::SingleClass);
    }
    let dim = dataset.dim();
    let (train_idx, holdout_idx) = holdout_split(dataset.len(), seed);
    let gather = |indices: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) {
        (
            indices.iter().map(|i| dataset.features[*i].clone()).collect(),
            indices.iter().map(|i| dataset.labels[*i]).collect(),
        )
    };
    let (train_x, train_y) = gather(&train_idx);
    let (holdout_x, holdout_y) = gather(&holdout_idx);

    let mut params = ModelParams {
        weights: vec![0.0; dim + 1],
        sample_count: train_idx.len() as u64,
    };
    let mut loss_history = vec![log_loss(&params, &train_x, &train_y)];
    let mut achieved = accuracy_on(&params, &holdout_x, &holdout_y);
    let mut epochs_used = 0;

    while achieved < target_accuracy && epochs_used < max_epochs {
        let mut grad = vec![0.0; dim + 1];
        for (x, label) in train_x.iter().zip(&train_y) {
            let err = sigmoid(decision_value(&params.weights, x)) - f64::from(*label);
            for (g, v) in grad[..dim].iter_mut().zip(x) {
                *g += err * v;
            }
            grad[dim] += err;
        }
        let scale = DEFAULT_STEP_SIZE / train_x.len() as f64;
        for (w, g) in params.weights.iter_mut().zip(&grad) {
            *w -= scale * g;
        }
        epochs_used += 1;
        loss_history.push(log_loss(&params, &train_x, &train_y));
        achieved = accuracy_on(&params, &holdout_x, &holdout_y);
    }

    Ok(TrainOutcome {
        params,
        achieved_accuracy: achieved,
        epochs_used,
        loss_history,
    })
}
