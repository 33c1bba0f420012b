//! Random-perturbation controls and validity-versus-confidence curves.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::ClassifierWeights;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::metrics::MetricValue;
use crate::model::{ExplanationSet, ExplanationStatus, PrivacyLabel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Noise {
    /// Gaussian draw rescaled to unit L2 norm.
    #[default]
    GaussianUnitNorm,
    /// Raw isotropic Gaussian with the given standard deviation.
    GaussianSigma { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub num_vectors: usize,
    pub noise: Noise,
    pub thresholds: Vec<f64>,
    pub seed: u64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            num_vectors: 200,
            noise: Noise::GaussianUnitNorm,
            thresholds: default_thresholds(),
            seed: 0,
        }
    }
}

/// 0.5, 0.55, ..., 0.95.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

impl RobustnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self
            .thresholds
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::Config(
                "thresholds must be strictly ascending".into(),
            ));
        }
        if self.thresholds.iter().any(|t| !(0.5..1.0).contains(t)) {
            return Err(Error::Config("thresholds must lie in [0.5, 1)".into()));
        }
        if let Noise::GaussianSigma { sigma } = self.noise {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::Config("noise sigma must be positive".into()));
            }
        }
        Ok(())
    }
}

/// `num_vectors` embeddings `x − δ_k` drawn with `seed`.
pub fn random_perturb(
    x: &EmbeddingVector,
    num_vectors: usize,
    noise: Noise,
    seed: u64,
) -> Vec<EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = x.dimension();
    let mut out = Vec::with_capacity(num_vectors);
    while out.len() < num_vectors {
        let raw: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let raw = EmbeddingVector::new(raw).expect("gaussian draws are finite");
        let delta = match noise {
            Noise::GaussianUnitNorm => match raw.normalized() {
                Some(u) => u,
                None => continue,
            },
            Noise::GaussianSigma { sigma } => raw.scaled(sigma),
        };
        out.push(x - &delta);
    }
    out
}

/// Per-image seed so results do not depend on manifest order.
pub fn image_seed(seed: u64, image_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFlips {
    pub image_id: String,
    /// Confidence of every counterfactual that flipped the prediction.
    pub flip_confidences: Vec<f64>,
}

impl ImageFlips {
    pub fn flipped(&self) -> bool {
        !self.flip_confidences.is_empty()
    }

    pub fn max_confidence(&self) -> f64 {
        self.flip_confidences.iter().copied().fold(0.0, f64::max)
    }

    pub fn summary(&self) -> (bool, f64) {
        (self.flipped(), self.max_confidence())
    }
}

/// Mean confidence over every flipping counterfactual in the cohort.
pub fn mean_flip_confidence(images: &[ImageFlips]) -> MetricValue {
    let all: Vec<f64> = images
        .iter()
        .flat_map(|i| i.flip_confidences.iter().copied())
        .collect();
    if all.is_empty() {
        return MetricValue::Undefined("no flips".into());
    }
    MetricValue::Value(all.iter().sum::<f64>() / all.len() as f64)
}

/// Random-direction flips for every image labelled and predicted private,
/// sorted by image id.
pub fn random_flips(
    manifest: &DatasetManifest,
    weights: &ClassifierWeights,
    num_vectors: usize,
    noise: Noise,
    seed: u64,
) -> Result<Vec<ImageFlips>> {
    if weights.dimension() != manifest.dimension {
        return Err(Error::DimensionMismatch {
            expected: manifest.dimension,
            found: weights.dimension(),
        });
    }
    let mut out = Vec::new();
    for record in &manifest.records {
        if record.label != PrivacyLabel::Private
            || weights.predict(&record.embedding)?.label != PrivacyLabel::Private
        {
            continue;
        }
        let mut flip_confidences = Vec::new();
        for x_hat in random_perturb(
            &record.embedding,
            num_vectors,
            noise,
            image_seed(seed, &record.id),
        ) {
            let p = weights.predict(&x_hat)?;
            if p.label == PrivacyLabel::Public {
                flip_confidences.push(p.confidence);
            }
        }
        out.push(ImageFlips {
            image_id: record.id.clone(),
            flip_confidences,
        });
    }
    out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(out)
}

/// Valid scenario counterfactuals of each explained-cohort image.
pub fn explanation_flips(sets: &[ExplanationSet]) -> Vec<ImageFlips> {
    let mut out: Vec<ImageFlips> = sets
        .iter()
        .filter(|s| s.status != ExplanationStatus::Skipped)
        .map(|s| ImageFlips {
            image_id: s.image_id.clone(),
            flip_confidences: s.candidates_valid.iter().map(|c| c.confidence).collect(),
        })
        .collect();
    out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub validity: MetricValue,
}

/// Fraction of images with at least one flip of confidence `≥ τ`, per `τ`.
///
/// Each entry is `(flipped, best flip confidence)` for one image.
pub fn validity_at_thresholds(flips: &[(bool, f64)], thresholds: &[f64]) -> Vec<CurvePoint> {
    thresholds
        .iter()
        .map(|&t| CurvePoint {
            threshold: t,
            validity: if flips.is_empty() {
                MetricValue::Undefined("empty cohort".into())
            } else {
                let hits = flips.iter().filter(|(f, c)| *f && *c >= t).count();
                MetricValue::Value(hits as f64 / flips.len() as f64)
            },
        })
        .collect()
}

/// `threshold,method,validity` rows; undefined validity is left empty.
pub fn curve_rows(method: &str, curve: &[CurvePoint]) -> String {
    let mut out = String::new();
    for p in curve {
        let v = p
            .validity
            .value()
            .map(|v| v.to_string())
            .unwrap_or_default();
        let _ = writeln!(out, "{},{method},{v}", p.threshold);
    }
    out
}

pub const CURVE_HEADER: &str = "threshold,method,validity\n";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_offsets() {
        let x = EmbeddingVector::new(vec![0.3, -1.0, 2.0, 0.0]).unwrap();
        let ps = random_perturb(&x, 25, Noise::GaussianUnitNorm, 9);
        assert_eq!(ps.len(), 25);
        for p in &ps {
            assert!(((&x - p).norm() - 1.0).abs() < 1e-9);
        }
        assert_eq!(ps, random_perturb(&x, 25, Noise::GaussianUnitNorm, 9));
        assert!(random_perturb(&x, 0, Noise::GaussianUnitNorm, 9).is_empty());
    }

    #[test]
    fn curve_example() {
        let c = validity_at_thresholds(&[(true, 0.55), (true, 0.75)], &[0.5, 0.7]);
        assert_eq!(c[0].validity, MetricValue::Value(1.0));
        assert_eq!(c[1].validity, MetricValue::Value(0.5));
        let empty = validity_at_thresholds(&[], &[0.5]);
        assert!(empty[0].validity.value().is_none());
    }

    #[test]
    fn config_validation() {
        let mut c = RobustnessConfig::default();
        assert!(c.validate().is_ok());
        c.thresholds = vec![0.7, 0.5];
        assert!(c.validate().is_err());
        c.thresholds = vec![0.4];
        assert!(c.validate().is_err());
    }
}
