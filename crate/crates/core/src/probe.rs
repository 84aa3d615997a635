//! Logistic-regression head on frozen image embeddings, optionally on the
//! concatenation of an optical and a SAR embedding.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::Embedding;
use crate::sampler::EpochSampler;
use crate::tensorstore::{ArchiveError, Tensor, TensorArchive};
use crate::verdict::{Label, Verdict};

pub const CANONICAL_STEPS: usize = 1000;
pub const CANONICAL_BATCH: usize = 10;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set contains only {0:?} samples")]
    SingleClassTrainingSet(Label),
    #[error("expected dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding is not unit-norm")]
    NotNormalized,
    #[error("invalid probe: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            steps: CANONICAL_STEPS,
            batch_size: CANONICAL_BATCH,
            learning_rate: 1e-3,
            seed,
            optimizer: Optimizer::Adam,
        }
    }

    /// True for the 1000-step, batch-10 budget.
    pub fn is_canonical(&self) -> bool {
        self.steps == CANONICAL_STEPS && self.batch_size == CANONICAL_BATCH
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub weights: Vec<f32>,
    pub bias: f32,
    pub input_dim: usize,
    /// Modality tag of the training data, e.g. `S2/RGB+SAR`.
    pub trained_on: String,
    pub config: TrainConfig,
}

impl ProbeModel {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.weights.len() != self.input_dim {
            return Err(ProbeError::InvalidModel(format!(
                "{} weights for input dimension {}",
                self.weights.len(),
                self.input_dim
            )));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(ProbeError::InvalidModel("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn logit(&self, x: &[f32]) -> Result<f64, ProbeError> {
        if x.len() != self.input_dim {
            return Err(ProbeError::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(self.bias as f64 + self.weights.iter().zip(x).map(|(&w, &v)| w as f64 * v as f64).sum::<f64>())
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new();
        a.insert("probe.weights", Tensor::from_vec(self.weights.clone()));
        a.insert("probe.bias", Tensor::from_vec(vec![self.bias]));
        a.set_metadata("trained_on", self.trained_on.clone());
        a.set_metadata("seed", self.config.seed.to_string());
        a.set_metadata("steps", self.config.steps.to_string());
        a.set_metadata("batch_size", self.config.batch_size.to_string());
        a.set_metadata("learning_rate", self.config.learning_rate.to_string());
        a.set_metadata("optimizer", "adam");
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self, ProbeError> {
        let weights = a.tensor("probe.weights")?;
        if weights.shape().len() != 1 {
            return Err(ProbeError::InvalidModel("probe.weights must be rank 1".into()));
        }
        let bias = a.tensor_with_shape("probe.bias", &[1])?.data()[0];
        let parse_f64 = |key: &str| -> Result<f64, ProbeError> {
            a.meta(key)?.parse().map_err(|_| {
                ProbeError::Archive(ArchiveError::InvalidMetadata {
                    key: key.into(),
                    reason: "not a number".into(),
                })
            })
        };
        let config = TrainConfig {
            steps: a.meta_usize("steps")?,
            batch_size: a.meta_usize("batch_size").unwrap_or(CANONICAL_BATCH),
            learning_rate: parse_f64("learning_rate").unwrap_or(1e-3),
            seed: a.meta_usize("seed")? as u64,
            optimizer: Optimizer::Adam,
        };
        let model = Self {
            input_dim: weights.numel(),
            weights: weights.data().to_vec(),
            bias,
            trained_on: a.meta("trained_on")?.to_string(),
            config,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProbeError> {
        Ok(self.to_archive().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProbeError> {
        Self::from_archive(&TensorArchive::read(path)?)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of one logit against a 0/1 target.
fn bce(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

/// Mean logistic loss over `batch` and its gradient with respect to the
/// weights and bias.
pub fn logistic_loss_and_grad(weights: &[f64], bias: f64, batch: &[(&[f32], Label)]) -> (f64, Vec<f64>, f64) {
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    let mut loss = 0.0;
    let inv = 1.0 / batch.len() as f64;
    for &(x, label) in batch {
        let y = label.as_target() as f64;
        let z = bias + weights.iter().zip(x).map(|(&w, &v)| w * v as f64).sum::<f64>();
        loss += bce(z, y) * inv;
        let r = (sigmoid(z) - y) * inv;
        for (g, &v) in gw.iter_mut().zip(x) {
            *g += r * v as f64;
        }
        gb += r;
    }
    (loss, gw, gb)
}

fn check_training_set<V: AsRef<[f32]>>(data: &[(V, Label)]) -> Result<usize, ProbeError> {
    let first = data.first().ok_or(ProbeError::EmptyTrainingSet)?;
    let dim = first.0.as_ref().len();
    for (x, _) in data {
        if x.as_ref().len() != dim {
            return Err(ProbeError::DimensionMismatch {
                expected: dim,
                actual: x.as_ref().len(),
            });
        }
    }
    if data.iter().all(|(_, l)| *l == first.1) {
        return Err(ProbeError::SingleClassTrainingSet(first.1));
    }
    Ok(dim)
}

pub fn train_probe<V: AsRef<[f32]>>(
    data: &[(V, Label)],
    config: &TrainConfig,
    trained_on: &str,
) -> Result<ProbeModel, ProbeError> {
    train_probe_traced(data, config, trained_on).map(|(m, _)| m)
}

/// Trains and also returns the minibatch loss at every step.
pub fn train_probe_traced<V: AsRef<[f32]>>(
    data: &[(V, Label)],
    config: &TrainConfig,
    trained_on: &str,
) -> Result<(ProbeModel, Vec<f64>), ProbeError> {
    let dim = check_training_set(data)?;
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let (mut m_w, mut v_w) = (vec![0.0f64; dim], vec![0.0f64; dim]);
    let (mut m_b, mut v_b) = (0.0f64, 0.0f64);
    let mut sampler = EpochSampler::new(data.len(), config.seed);
    let mut losses = Vec::with_capacity(config.steps);
    let lr = config.learning_rate;
    for t in 1..=config.steps {
        let batch: Vec<(&[f32], Label)> = sampler
            .next_batch(config.batch_size)
            .into_iter()
            .map(|i| (data[i].0.as_ref(), data[i].1))
            .collect();
        let (loss, gw, gb) = logistic_loss_and_grad(&w, b, &batch);
        losses.push(loss);
        let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
        let adam = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        };
        for i in 0..dim {
            adam(&mut w[i], &mut m_w[i], &mut v_w[i], gw[i]);
        }
        adam(&mut b, &mut m_b, &mut v_b, gb);
    }
    let model = ProbeModel {
        weights: w.into_iter().map(|x| x as f32).collect(),
        bias: b as f32,
        input_dim: dim,
        trained_on: trained_on.to_string(),
        config: *config,
    };
    model.validate()?;
    Ok((model, losses))
}

pub fn predict_probe(model: &ProbeModel, x: &[f32]) -> Result<Verdict, ProbeError> {
    Ok(Verdict::from_probability(sigmoid(model.logit(x)?) as f32))
}

/// `[optical ‖ sar]`, optical first.
pub fn fuse_radar_features(optical: &Embedding, sar: &Embedding) -> Result<Vec<f32>, ProbeError> {
    if !optical.is_normalized() || !sar.is_normalized() {
        return Err(ProbeError::NotNormalized);
    }
    if optical.dim() != sar.dim() {
        return Err(ProbeError::DimensionMismatch {
            expected: optical.dim(),
            actual: sar.dim(),
        });
    }
    let mut out = Vec::with_capacity(optical.dim() * 2);
    out.extend_from_slice(optical.values());
    out.extend_from_slice(sar.values());
    Ok(out)
}
