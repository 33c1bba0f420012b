use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EmbeddingProvider;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::model::{canonicalize_tag, ImageRecord, PrivacyLabel};

/// Exactly additive stand-in for a joint image-text encoder.
///
/// A phrase maps to a unit vector drawn from a Gaussian seeded by
/// `sha256(seed || phrase)`. A prompt is split on commas into canonical
/// phrases; repeated phrases count once, the anchor prompt contributes zero,
/// and the prompt embedding is the sum of the remaining phrase vectors. An
/// image embeds as the sum of its extracted-tag vectors plus an optional
/// seeded residual of fixed magnitude.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    dimension: usize,
    seed: u64,
    anchor: String,
    residual: f64,
    manifest: Option<Arc<DatasetManifest>>,
    index: HashMap<String, usize>,
}

impl SyntheticProvider {
    pub fn new(dimension: usize, seed: u64) -> Self {
        Self {
            dimension,
            seed,
            anchor: super::DEFAULT_ANCHOR_PROMPT.to_owned(),
            residual: 0.0,
            manifest: None,
            index: HashMap::new(),
        }
    }

    pub fn with_anchor(mut self, anchor: &str) -> Result<Self> {
        self.anchor = canonicalize_tag(anchor)?;
        Ok(self)
    }

    pub fn with_residual(mut self, magnitude: f64) -> Self {
        self.residual = magnitude;
        self
    }

    /// Attaches image records so `embed_image` / `detect_tags` can resolve ids.
    pub fn with_manifest(mut self, manifest: Arc<DatasetManifest>) -> Result<Self> {
        if manifest.dimension != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: manifest.dimension,
            });
        }
        self.index = manifest
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        self.manifest = Some(manifest);
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Seeded unit vector for one canonical phrase.
    pub fn phrase_vector(&self, phrase: &str) -> EmbeddingVector {
        self.seeded_unit(b"phrase", phrase)
    }

    fn seeded_unit(&self, domain: &[u8], key: &str) -> EmbeddingVector {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(domain);
        hasher.update([0u8]);
        hasher.update(key.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        loop {
            let raw: Vec<f64> = (0..self.dimension)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            if let Some(v) = EmbeddingVector::new(raw).ok().and_then(|v| v.normalized()) {
                return v;
            }
        }
    }

    /// Embedding of an unordered tag set: sum of phrase vectors.
    pub fn embed_tags<S: AsRef<str>>(&self, tags: &[S]) -> Result<EmbeddingVector> {
        let mut acc = EmbeddingVector::zeros(self.dimension);
        let mut seen: Vec<String> = Vec::new();
        for t in tags {
            let phrase = canonicalize_tag(t.as_ref())?;
            if seen.contains(&phrase) {
                continue;
            }
            if phrase != self.anchor {
                acc.add_scaled(&self.phrase_vector(&phrase), 1.0);
            }
            seen.push(phrase);
        }
        Ok(acc)
    }

    /// Image embedding for an arbitrary record (need not be attached).
    pub fn embed_record(&self, record: &ImageRecord) -> Result<EmbeddingVector> {
        let mut x = self.embed_tags(&record.extracted_tags)?;
        if self.residual > 0.0 {
            x.add_scaled(&self.seeded_unit(b"residual", &record.id), self.residual);
        }
        Ok(x)
    }

    fn record(&self, image_id: &str) -> Result<&ImageRecord> {
        let manifest = self
            .manifest
            .as_ref()
            .ok_or_else(|| Error::MissingRecord(image_id.to_owned()))?;
        self.index
            .get(image_id)
            .map(|&i| &manifest.records[i])
            .ok_or_else(|| Error::MissingRecord(image_id.to_owned()))
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn anchor_prompt(&self) -> &str {
        &self.anchor
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let phrases: Vec<&str> = text.split(',').filter(|p| !p.trim().is_empty()).collect();
        if phrases.is_empty() {
            return Err(Error::Invalid("cannot embed empty text".into()));
        }
        self.embed_tags(&phrases)
    }

    fn embed_image(&self, image_id: &str) -> Result<EmbeddingVector> {
        self.embed_record(self.record(image_id)?)
    }

    fn detect_tags(&self, image_id: &str) -> Result<Vec<String>> {
        let r = self.record(image_id)?;
        Ok(if r.detected_tags.is_empty() {
            r.extracted_tags.clone()
        } else {
            r.detected_tags.clone()
        })
    }
}

/// Parameters of a generated labelled world where an image is private iff
/// it carries the sensitive tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub name: String,
    pub dimension: usize,
    pub images: usize,
    /// Number of neutral tags in the vocabulary.
    pub vocabulary: usize,
    /// Inclusive range of neutral tags per image.
    pub min_tags: usize,
    pub max_tags: usize,
    pub sensitive_tag: String,
    pub private_fraction: f64,
    pub seed: u64,
    pub residual: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            name: "synthetic-world".into(),
            dimension: 32,
            images: 200,
            vocabulary: 12,
            min_tags: 2,
            max_tags: 4,
            sensitive_tag: "secret".into(),
            private_fraction: 0.5,
            seed: 7,
            residual: 0.0,
        }
    }
}

const WORLD_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

const WORDS: &[&str] = &[
    "tree", "car", "dog", "beach", "table", "window", "street", "mountain", "cup", "book",
    "flower", "bicycle", "sky", "chair", "river", "lamp", "bridge", "cat", "guitar", "clock",
    "train", "garden", "boat", "cake", "door", "field", "bird", "laptop", "painting", "snow",
    "road", "kitchen", "horse", "bottle", "forest", "shoe", "candle", "fence", "cloud", "piano",
];

/// Generates a manifest whose embeddings come from the synthetic oracle
/// seeded with `config.seed`.
pub fn generate_world(config: &WorldConfig) -> Result<DatasetManifest> {
    if config.dimension == 0 || config.images == 0 {
        return Err(Error::Config(
            "world needs positive dimension and image count".into(),
        ));
    }
    if config.min_tags == 0
        || config.min_tags > config.max_tags
        || config.max_tags > config.vocabulary
    {
        return Err(Error::Config(
            "tag range must satisfy 1 <= min <= max <= vocabulary".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.private_fraction) {
        return Err(Error::Config("private fraction must lie in [0, 1]".into()));
    }
    let sensitive = canonicalize_tag(&config.sensitive_tag)?;
    let vocabulary: Vec<String> = (0..config.vocabulary)
        .map(|i| match WORDS.get(i) {
            Some(w) => (*w).to_owned(),
            None => format!("object {i}"),
        })
        .filter(|w| *w != sensitive)
        .collect();

    let provider =
        SyntheticProvider::new(config.dimension, config.seed).with_residual(config.residual);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ WORLD_STREAM);
    let n_private = (config.images as f64 * config.private_fraction).round() as usize;

    let mut records = Vec::with_capacity(config.images);
    for i in 0..config.images {
        let private = i < n_private;
        let k = rng.random_range(config.min_tags..=config.max_tags);
        let mut tags: Vec<String> = vocabulary.choose_multiple(&mut rng, k).cloned().collect();
        if private {
            let at = rng.random_range(0..=tags.len());
            tags.insert(at, sensitive.clone());
        }
        let label = if private {
            PrivacyLabel::Private
        } else {
            PrivacyLabel::Public
        };
        let mut record = ImageRecord::new(
            format!("img{i:04}"),
            label,
            EmbeddingVector::zeros(config.dimension),
            &tags,
            &tags,
        )?;
        record.embedding = provider.embed_record(&record)?;
        records.push(record);
    }
    // Interleave labels so file order carries no signal.
    let mut order: Vec<usize> = (0..records.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut slots: Vec<Option<ImageRecord>> = records.into_iter().map(Some).collect();
    let records = order.into_iter().filter_map(|i| slots[i].take()).collect();

    let mut library = vocabulary;
    library.push(sensitive);
    DatasetManifest::new(
        config.name.clone(),
        config.dimension,
        records,
        Some(library),
    )
}
