//! Single-logit logistic privacy classifier over embeddings.
//!
//! `logit = w·x + b`; a positive logit means private. Training minimizes
//! mean binary cross-entropy with mini-batch Adam from a zero start.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, EmbeddingVector};
use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::model::PrivacyLabel;

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)`, stable for large `|z|`.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: PrivacyLabel,
    /// Probability of `label`; always at least 0.5.
    pub confidence: f64,
    pub logit: f64,
}

impl Prediction {
    pub fn from_logit(logit: f64) -> Self {
        // A zero logit resolves to public.
        let label = if logit > 0.0 {
            PrivacyLabel::Private
        } else {
            PrivacyLabel::Public
        };
        Self {
            label,
            confidence: sigmoid(logit.abs()),
            logit,
        }
    }

    /// Probability the classifier assigns to `label`.
    pub fn probability_of(&self, label: PrivacyLabel) -> f64 {
        match label {
            PrivacyLabel::Private => sigmoid(self.logit),
            PrivacyLabel::Public => sigmoid(-self.logit),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 64,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWeights {
    pub weights: EmbeddingVector,
    pub bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    pub train_accuracy: f64,
}

/// On-disk weights file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub dimension: usize,
    pub weights: EmbeddingVector,
    pub bias: f64,
    pub train_config: TrainConfig,
    pub train_accuracy: f64,
}

impl WeightsFile {
    pub fn classifier(&self) -> Result<ClassifierWeights> {
        self.weights.check_dimension(self.dimension)?;
        ClassifierWeights::new(self.weights.clone(), self.bias)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Self = serde_json::from_str(&text)?;
        file.classifier()?;
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl ClassifierWeights {
    pub fn new(weights: EmbeddingVector, bias: f64) -> Result<Self> {
        if !bias.is_finite() {
            return Err(Error::Invalid("bias is not finite".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn dimension(&self) -> usize {
        self.weights.dimension()
    }

    pub fn logit(&self, x: &EmbeddingVector) -> Result<f64> {
        x.check_dimension(self.dimension())?;
        Ok(self.weights.dot(x) + self.bias)
    }

    pub fn predict(&self, x: &EmbeddingVector) -> Result<Prediction> {
        Ok(Prediction::from_logit(self.logit(x)?))
    }

    /// Cross-entropy of `target` at `x` and its gradient with respect to `x`.
    pub fn loss_and_gradient(
        &self,
        x: &EmbeddingVector,
        target: PrivacyLabel,
    ) -> Result<(f64, EmbeddingVector)> {
        let z = self.logit(x)?;
        let (loss, y) = match target {
            PrivacyLabel::Private => (softplus(-z), 1.0),
            PrivacyLabel::Public => (softplus(z), 0.0),
        };
        Ok((loss, self.weights.scaled(sigmoid(z) - y)))
    }

    /// Same weights with every sign flipped.
    pub fn negated(&self) -> Self {
        Self {
            weights: self.weights.scaled(-1.0),
            bias: -self.bias,
        }
    }
}

/// Mean cross-entropy of a parameter vector `(w, b)` over a dataset.
pub fn mean_loss(params: &ClassifierWeights, data: &[(EmbeddingVector, PrivacyLabel)]) -> f64 {
    let total: f64 = data
        .iter()
        .map(|(x, y)| {
            let z = params.weights.dot(x) + params.bias;
            match y {
                PrivacyLabel::Private => softplus(-z),
                PrivacyLabel::Public => softplus(z),
            }
        })
        .sum();
    total / data.len().max(1) as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Trains on every record of `manifest`.
pub fn train(
    manifest: &DatasetManifest,
    config: &TrainConfig,
) -> Result<(ClassifierWeights, TrainingLog)> {
    let data: Vec<(EmbeddingVector, PrivacyLabel)> = manifest
        .records
        .iter()
        .map(|r| (r.embedding.clone(), r.label))
        .collect();
    train_on(&data, manifest.dimension, config)
}

pub fn train_on(
    data: &[(EmbeddingVector, PrivacyLabel)],
    dimension: usize,
    config: &TrainConfig,
) -> Result<(ClassifierWeights, TrainingLog)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    for (x, _) in data {
        x.check_dimension(dimension)?;
    }
    let has_private = data.iter().any(|(_, y)| *y == PrivacyLabel::Private);
    let has_public = data.iter().any(|(_, y)| *y == PrivacyLabel::Public);
    if !(has_private && has_public) {
        let only = if has_private { "pr" } else { "pu" };
        return Err(Error::SingleClass(only));
    }

    // Parameter layout: d weights followed by the bias.
    let mut params = vec![0.0; dimension + 1];
    let mut adam = Adam::new(dimension + 1, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; dimension + 1];
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (x, y) = &data[i];
                let z = dot(&params[..dimension], x.as_slice()) + params[dimension];
                let target = if *y == PrivacyLabel::Private {
                    1.0
                } else {
                    0.0
                };
                epoch_loss += if target == 1.0 {
                    softplus(-z)
                } else {
                    softplus(z)
                };
                let r = (sigmoid(z) - target) * scale;
                for (g, xi) in grad[..dimension].iter_mut().zip(x.as_slice()) {
                    *g += r * xi;
                }
                grad[dimension] += r;
            }
            adam.step(&mut params, &grad);
        }
        epoch_loss /= data.len() as f64;
        if !epoch_loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                stage: "epoch",
                index: epoch,
            });
        }
        let current = to_weights(&params, dimension)?;
        log.push(EpochStats {
            epoch,
            loss: epoch_loss,
            accuracy: accuracy(&current, data),
        });
    }

    let weights = to_weights(&params, dimension)?;
    let train_accuracy = accuracy(&weights, data);
    Ok((
        weights,
        TrainingLog {
            epochs: log,
            train_accuracy,
        },
    ))
}

fn to_weights(params: &[f64], dimension: usize) -> Result<ClassifierWeights> {
    ClassifierWeights::new(
        EmbeddingVector::new(params[..dimension].to_vec())?,
        params[dimension],
    )
}

pub fn accuracy(weights: &ClassifierWeights, data: &[(EmbeddingVector, PrivacyLabel)]) -> f64 {
    let correct = data
        .iter()
        .filter(|(x, y)| Prediction::from_logit(weights.weights.dot(x) + weights.bias).label == *y)
        .count();
    correct as f64 / data.len().max(1) as f64
}
