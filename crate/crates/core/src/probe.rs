//! Linear probe over hidden representations.
//!
//! A logistic-regression classifier trained by full-batch gradient descent
//! from a zero initialisation. Its sigmoid output serves as an order score
//! over hidden views.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::SplitMix64;
use crate::types::ScoreVector;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("training set needs both labels and at least two examples")]
    DegenerateLabels,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(u8),
    #[error("invalid probe file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeExample {
    pub z: Vec<f64>,
    pub label: u8,
}

impl ProbeExample {
    pub fn new(z: impl Into<Vec<f64>>, label: u8) -> Result<Self, ProbeError> {
        if label > 1 {
            return Err(ProbeError::InvalidLabel(label));
        }
        Ok(Self { z: z.into(), label })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub examples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub dim: usize,
    #[serde(default)]
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Mini-batch size; `None` means full batch. The seed only matters for
    /// mini-batch shuffling since weights start at zero.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1000, learning_rate: 0.1, seed: 0, batch_size: None }
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl LinearProbe {
    pub fn zeros(dim: usize) -> Self {
        Self { weights: vec![0.0; dim], bias: 0.0, dim, meta: TrainingMeta::default() }
    }

    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        let dim = weights.len();
        Self { weights, bias, dim, meta: TrainingMeta::default() }
    }

    pub fn logit(&self, z: &[f64]) -> Result<f64, ProbeError> {
        if z.len() != self.dim {
            return Err(ProbeError::DimensionMismatch { expected: self.dim, found: z.len() });
        }
        Ok(self.weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.bias)
    }

    /// `sigmoid(<w, z> + b)`.
    pub fn score_raw(&self, z: &[f64]) -> Result<f64, ProbeError> {
        self.logit(z).map(sigmoid)
    }

    pub fn score(&self, z: &ScoreVector) -> Result<f64, ProbeError> {
        self.score_raw(z.values())
    }

    pub fn accuracy(&self, examples: &[ProbeExample]) -> Result<f64, ProbeError> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for ex in examples {
            let predicted = u8::from(self.logit(&ex.z)? > 0.0);
            correct += usize::from(predicted == ex.label);
        }
        Ok(correct as f64 / examples.len() as f64)
    }

    /// Mean logistic loss.
    pub fn loss(&self, examples: &[ProbeExample]) -> Result<f64, ProbeError> {
        let mut total = 0.0;
        for ex in examples {
            let t = self.logit(&ex.z)?;
            // -[y log s(t) + (1-y) log(1 - s(t))] = softplus(t) - y t
            total += softplus(t) - f64::from(ex.label) * t;
        }
        Ok(total / examples.len().max(1) as f64)
    }

    /// Analytic gradient of [`loss`](Self::loss); the bias component is last.
    pub fn gradient(&self, examples: &[ProbeExample]) -> Result<Vec<f64>, ProbeError> {
        let mut grad = vec![0.0; self.dim + 1];
        for ex in examples {
            let residual = self.score_raw(&ex.z)? - f64::from(ex.label);
            for (g, x) in grad.iter_mut().zip(&ex.z) {
                *g += residual * x;
            }
            grad[self.dim] += residual;
        }
        let n = examples.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    fn step(&mut self, grad: &[f64], lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w -= lr * g;
        }
        self.bias -= lr * grad[self.dim];
    }

    pub fn save(&self, path: &Path) -> Result<(), ProbeError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| ProbeError::Format(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ProbeError> {
        let text = std::fs::read_to_string(path)?;
        let probe: Self = serde_json::from_str(&text).map_err(|e| ProbeError::Format(e.to_string()))?;
        if probe.weights.len() != probe.dim {
            return Err(ProbeError::DimensionMismatch { expected: probe.dim, found: probe.weights.len() });
        }
        Ok(probe)
    }
}

fn check_examples(examples: &[ProbeExample]) -> Result<usize, ProbeError> {
    let first = examples.first().ok_or(ProbeError::DegenerateLabels)?;
    let dim = first.z.len();
    if let Some(bad) = examples.iter().find(|e| e.z.len() != dim) {
        return Err(ProbeError::DimensionMismatch { expected: dim, found: bad.z.len() });
    }
    let positives = examples.iter().filter(|e| e.label == 1).count();
    if examples.len() < 2 || positives == 0 || positives == examples.len() {
        return Err(ProbeError::DegenerateLabels);
    }
    Ok(dim)
}

pub fn train(examples: &[ProbeExample], config: &TrainConfig) -> Result<LinearProbe, ProbeError> {
    let dim = check_examples(examples)?;
    let mut probe = LinearProbe::zeros(dim);
    match config.batch_size {
        None => {
            for _ in 0..config.epochs {
                let grad = probe.gradient(examples)?;
                probe.step(&grad, config.learning_rate);
            }
        }
        Some(size) => {
            let size = size.max(1);
            let mut rng = SplitMix64::new(config.seed);
            let mut order: Vec<usize> = (0..examples.len()).collect();
            let mut batch = Vec::with_capacity(size);
            for _ in 0..config.epochs {
                rng.shuffle(&mut order);
                for chunk in order.chunks(size) {
                    batch.clear();
                    batch.extend(chunk.iter().map(|&i| examples[i].clone()));
                    let grad = probe.gradient(&batch)?;
                    probe.step(&grad, config.learning_rate);
                }
            }
        }
    }
    probe.meta = TrainingMeta {
        examples: examples.len(),
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        final_loss: probe.loss(examples)?,
        train_accuracy: probe.accuracy(examples)?,
    };
    Ok(probe)
}

/// Largest relative discrepancy between the analytic gradient and central
/// finite differences of the loss, per coordinate. The relative error is
/// `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check(probe: &LinearProbe, examples: &[ProbeExample], epsilon: f64) -> Result<f64, ProbeError> {
    let analytic = probe.gradient(examples)?;
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let mut plus = probe.clone();
        let mut minus = probe.clone();
        if i < probe.dim {
            plus.weights[i] += epsilon;
            minus.weights[i] -= epsilon;
        } else {
            plus.bias += epsilon;
            minus.bias -= epsilon;
        }
        let numeric = (plus.loss(examples)? - minus.loss(examples)?) / (2.0 * epsilon);
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Reads `{"z": [...], "label": 0|1}` lines.
pub fn read_examples<R: std::io::BufRead>(reader: R) -> Result<Vec<ProbeExample>, ProbeError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: ProbeExample =
            serde_json::from_str(&line).map_err(|e| ProbeError::Format(format!("line {}: {e}", i + 1)))?;
        out.push(ProbeExample::new(ex.z, ex.label)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn separable_2d() -> Vec<ProbeExample> {
        (0..100)
            .map(|i| {
                if i % 2 == 0 {
                    ProbeExample::new(vec![2.0, 0.0], 1).unwrap()
                } else {
                    ProbeExample::new(vec![-2.0, 0.0], 0).unwrap()
                }
            })
            .collect()
    }

    #[test]
    fn separable_data_reaches_full_accuracy() {
        let cfg = TrainConfig { epochs: 500, ..TrainConfig::default() };
        let probe = train(&separable_2d(), &cfg).unwrap();
        assert_eq!(probe.accuracy(&separable_2d()).unwrap(), 1.0);
        assert_eq!(probe.meta.train_accuracy, 1.0);
    }

    #[test]
    fn zero_epochs_gives_half() {
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let probe = train(&separable_2d(), &cfg).unwrap();
        assert_eq!(probe.weights, vec![0.0, 0.0]);
        assert_eq!(probe.score_raw(&[3.0, -7.0]).unwrap(), 0.5);
    }

    #[test]
    fn score_closed_form() {
        let probe = LinearProbe::new(vec![1.0], 0.0);
        assert!((probe.score_raw(&[1.0]).unwrap() - 0.7310585786300049).abs() < 1e-12);
        assert!(matches!(probe.score_raw(&[1.0, 2.0]), Err(ProbeError::DimensionMismatch { .. })));
    }

    #[test]
    fn degenerate_training_sets() {
        let one_class = vec![ProbeExample::new(vec![1.0], 1).unwrap(), ProbeExample::new(vec![2.0], 1).unwrap()];
        assert!(matches!(train(&one_class, &TrainConfig::default()), Err(ProbeError::DegenerateLabels)));
        let mixed = vec![ProbeExample::new(vec![1.0], 1).unwrap(), ProbeExample::new(vec![2.0, 1.0], 0).unwrap()];
        assert!(matches!(train(&mixed, &TrainConfig::default()), Err(ProbeError::DimensionMismatch { .. })));
        assert!(ProbeExample::new(vec![1.0], 2).is_err());
    }

    #[test]
    fn single_example_gradient_closed_form() {
        let probe = LinearProbe::new(vec![0.3], -0.2);
        let ex = vec![ProbeExample::new(vec![1.7], 1).unwrap()];
        let g = probe.gradient(&ex).unwrap();
        let residual = sigmoid(0.3 * 1.7 - 0.2) - 1.0;
        assert_eq!(g[0], residual * 1.7);
        assert_eq!(g[1], residual);
    }

    #[test]
    fn mirrored_data_has_zero_gradient_at_origin() {
        let examples: Vec<_> = [[1.0, 2.0], [-0.5, 3.0], [4.0, -1.0]]
            .iter()
            .flat_map(|z| {
                [
                    ProbeExample::new(z.to_vec(), 1).unwrap(),
                    ProbeExample::new(vec![-z[0], -z[1]], 0).unwrap(),
                    ProbeExample::new(z.to_vec(), 0).unwrap(),
                    ProbeExample::new(vec![-z[0], -z[1]], 1).unwrap(),
                ]
            })
            .collect();
        let g = LinearProbe::zeros(2).gradient(&examples).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
    }

    #[test]
    fn mini_batch_is_seed_deterministic() {
        let cfg = TrainConfig { epochs: 20, batch_size: Some(7), seed: 9, ..TrainConfig::default() };
        let a = train(&separable_2d(), &cfg).unwrap();
        let b = train(&separable_2d(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.json");
        let probe = train(&separable_2d(), &TrainConfig { epochs: 10, ..TrainConfig::default() }).unwrap();
        probe.save(&path).unwrap();
        assert_eq!(LinearProbe::load(&path).unwrap(), probe);
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        for key in ["weights", "bias", "dim", "meta"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }

    proptest! {
        #[test]
        fn score_strictly_inside_unit_interval(
            w in prop::collection::vec(-3.0f64..3.0, 3),
            z in prop::collection::vec(-3.0f64..3.0, 3),
            b in -3.0f64..3.0,
        ) {
            let s = LinearProbe::new(w, b).score_raw(&z).unwrap();
            prop_assert!(s > 0.0 && s < 1.0);
        }

        #[test]
        fn score_increases_along_weights(
            w in prop::collection::vec(-3.0f64..3.0, 3),
            z in prop::collection::vec(-3.0f64..3.0, 3),
            eps in 0.01f64..1.0,
        ) {
            let norm: f64 = w.iter().map(|x| x * x).sum();
            prop_assume!(norm > 1e-3);
            let probe = LinearProbe::new(w.clone(), 0.0);
            let moved: Vec<f64> = z.iter().zip(&w).map(|(a, b)| a + eps * b).collect();
            prop_assert!(probe.score_raw(&moved).unwrap() > probe.score_raw(&z).unwrap());
        }
    }
}
