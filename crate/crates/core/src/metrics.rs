//! Dataset-level explanation metrics.
//!
//! All scores are averaged over the selected ("best") explanations of the
//! explained images `D_b`, a subset of the correctly classified private
//! images `D_pr`:
//!
//! | metric | meaning |
//! |---|---|
//! | V | `|D_b| / |D_pr|` |
//! | F | mean fraction of an explanation's tags found by the image tagger |
//! | S | mean number of concepts per explanation |
//! | P | mean cosine between original and counterfactual embeddings |
//! | C | mean classifier probability of the flipped class |
//! | D | within-image dissimilarity of explanation texts |
//! | R | across-image dissimilarity of explanation-text centroids |
//!
//! Undefined metrics (empty cohorts, too few explanations) are reported as
//! such instead of as zeros. Images are reduced in id order so the result
//! does not depend on input order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::model::ExplanationSet;
use crate::providers::EmbeddingProvider;

/// Upper end of the sparsity axis when sparsity is drawn inverted in [0, 1].
pub const SPARSITY_DISPLAY_MAX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricValue {
    Value(f64),
    Undefined(String),
}

impl MetricValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(*v),
            MetricValue::Undefined(_) => None,
        }
    }

    fn undefined(reason: &str) -> Self {
        MetricValue::Undefined(reason.to_owned())
    }
}

/// One selected explanation, method-agnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExplanation {
    /// Tags the explanation is expressed in.
    pub tags: Vec<String>,
    /// Number of concepts used to build the counterfactual.
    pub sparsity: usize,
    pub counterfactual_embedding: EmbeddingVector,
    /// Probability of the flipped class.
    pub confidence: f64,
}

impl ScoredExplanation {
    /// Explanation text embedded for diversity and collapse.
    pub fn text(&self) -> String {
        self.tags.join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortImage {
    pub image_id: String,
    /// Original image embedding.
    pub embedding: EmbeddingVector,
    /// Empty when the image has no prediction-flipping explanation.
    pub best: Vec<ScoredExplanation>,
}

/// The correctly classified private images and their best explanations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCohort {
    images: Vec<CohortImage>,
}

impl EvaluationCohort {
    pub fn new(mut images: Vec<CohortImage>) -> Self {
        images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        Self { images }
    }

    /// Builds the cohort from explanation sets, skipping images outside the
    /// private cohort. Every id must exist in `manifest`.
    pub fn from_explanations(manifest: &DatasetManifest, sets: &[ExplanationSet]) -> Result<Self> {
        let index = manifest.index();
        let mut images = Vec::new();
        for set in sets {
            let &i = index
                .get(set.image_id.as_str())
                .ok_or_else(|| Error::MissingRecord(set.image_id.clone()))?;
            if !set.in_private_cohort() {
                continue;
            }
            images.push(CohortImage {
                image_id: set.image_id.clone(),
                embedding: manifest.records[i].embedding.clone(),
                best: set
                    .best
                    .iter()
                    .map(|c| ScoredExplanation {
                        tags: c.scenario.tags().to_vec(),
                        sparsity: c.sparsity(),
                        counterfactual_embedding: c.counterfactual_embedding.clone(),
                        confidence: c.confidence,
                    })
                    .collect(),
            });
        }
        Ok(Self::new(images))
    }

    pub fn images(&self) -> &[CohortImage] {
        &self.images
    }

    /// `|D_pr|`.
    pub fn private_count(&self) -> usize {
        self.images.len()
    }

    /// Images with at least one selected explanation (`D_b`).
    pub fn explained(&self) -> impl Iterator<Item = &CohortImage> + Clone {
        self.images.iter().filter(|i| !i.best.is_empty())
    }

    pub fn explained_count(&self) -> usize {
        self.explained().count()
    }

    fn explanations(&self) -> impl Iterator<Item = (&CohortImage, &ScoredExplanation)> + Clone {
        self.explained()
            .flat_map(|i| i.best.iter().map(move |e| (i, e)))
    }
}

fn mean_over(values: impl Iterator<Item = f64>, empty_reason: &str) -> MetricValue {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        MetricValue::undefined(empty_reason)
    } else {
        MetricValue::Value(sum / n as f64)
    }
}

const NO_EXPLAINED: &str = "no explained images";

/// Mean fraction of explanation tags detected in the image.
pub fn feasibility(
    cohort: &EvaluationCohort,
    provider: &dyn EmbeddingProvider,
) -> Result<MetricValue> {
    let mut terms = Vec::new();
    for image in cohort.explained() {
        let detected = provider.detect_tags(&image.image_id)?;
        for e in &image.best {
            if e.tags.is_empty() {
                continue;
            }
            let hits = e.tags.iter().filter(|t| detected.contains(t)).count();
            terms.push(hits as f64 / e.tags.len() as f64);
        }
    }
    Ok(mean_over(terms.into_iter(), NO_EXPLAINED))
}

pub fn validity(cohort: &EvaluationCohort) -> MetricValue {
    if cohort.private_count() == 0 {
        return MetricValue::undefined("empty private cohort");
    }
    MetricValue::Value(cohort.explained_count() as f64 / cohort.private_count() as f64)
}

pub fn sparsity(cohort: &EvaluationCohort) -> MetricValue {
    mean_over(
        cohort.explanations().map(|(_, e)| e.sparsity as f64),
        NO_EXPLAINED,
    )
}

/// Mean cosine between original and counterfactual embeddings. Zero-norm
/// pairs are excluded and reported in `warnings`.
pub fn proximity(cohort: &EvaluationCohort, warnings: &mut Vec<String>) -> MetricValue {
    let mut terms = Vec::new();
    for (image, e) in cohort.explanations() {
        match image.embedding.cosine(&e.counterfactual_embedding) {
            Some(c) => terms.push(c),
            None => warnings.push(format!(
                "proximity: zero-norm embedding for {} / {:?}, excluded",
                image.image_id,
                e.text()
            )),
        }
    }
    mean_over(terms.into_iter(), NO_EXPLAINED)
}

pub fn confidence_metric(cohort: &EvaluationCohort) -> MetricValue {
    mean_over(
        cohort.explanations().map(|(_, e)| e.confidence),
        NO_EXPLAINED,
    )
}

/// Normalization of the within-image diversity sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiversityVariant {
    /// Sum over unordered pairs divided by `N(N−1)`, as printed.
    #[default]
    Literal,
    /// Mean over unordered pairs, i.e. divided by `N(N−1)/2`.
    UnorderedMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityResult {
    pub value: MetricValue,
    /// Per-image terms, keyed by image id, for images with `N ≥ 2`.
    pub per_image: Vec<(String, f64)>,
    /// Explained images skipped because they have fewer than two explanations.
    pub excluded: usize,
}

fn explanation_embeddings(
    image: &CohortImage,
    text_provider: &dyn EmbeddingProvider,
) -> Result<Vec<EmbeddingVector>> {
    let texts: Vec<String> = image.best.iter().map(ScoredExplanation::text).collect();
    text_provider.embed_texts(&texts)
}

pub fn diversity(
    cohort: &EvaluationCohort,
    text_provider: &dyn EmbeddingProvider,
    variant: DiversityVariant,
) -> Result<DiversityResult> {
    let mut per_image = Vec::new();
    let mut excluded = 0;
    for image in cohort.explained() {
        let n = image.best.len();
        if n < 2 {
            excluded += 1;
            continue;
        }
        let emb = explanation_embeddings(image, text_provider)?;
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += 1.0 - emb[i].cosine(&emb[j]).unwrap_or(0.0);
            }
        }
        let pairs = (n * (n - 1)) as f64;
        let term = match variant {
            DiversityVariant::Literal => sum / pairs,
            DiversityVariant::UnorderedMean => 2.0 * sum / pairs,
        };
        per_image.push((image.image_id.clone(), term));
    }
    let value = if per_image.is_empty() {
        MetricValue::undefined("no explained image has two or more explanations")
    } else {
        MetricValue::Value(per_image.iter().map(|(_, t)| t).sum::<f64>() / per_image.len() as f64)
    };
    Ok(DiversityResult {
        value,
        per_image,
        excluded,
    })
}

/// Mean dissimilarity between per-image explanation centroids over ordered
/// image pairs.
pub fn collapse(
    cohort: &EvaluationCohort,
    text_provider: &dyn EmbeddingProvider,
    warnings: &mut Vec<String>,
) -> Result<MetricValue> {
    let mut centroids = Vec::new();
    for image in cohort.explained() {
        let emb = explanation_embeddings(image, text_provider)?;
        let mut c = EmbeddingVector::zeros(text_provider.dimension());
        for e in &emb {
            c.add_scaled(e, 1.0 / emb.len() as f64);
        }
        if c.norm() == 0.0 {
            warnings.push(format!(
                "collapse: zero centroid for {}, excluded",
                image.image_id
            ));
            continue;
        }
        centroids.push(c);
    }
    let n = centroids.len();
    if n < 2 {
        return Ok(MetricValue::undefined("fewer than two explained images"));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += 1.0 - centroids[i].cosine(&centroids[j]).unwrap_or(0.0);
            }
        }
    }
    Ok(MetricValue::Value(sum / (n * (n - 1)) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerImageRow {
    pub image_id: String,
    pub explanations: usize,
    pub feasibility: Option<f64>,
    pub sparsity: Option<f64>,
    pub proximity: Option<f64>,
    pub confidence: Option<f64>,
    pub diversity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub validity: MetricValue,
    pub feasibility: MetricValue,
    pub sparsity: MetricValue,
    pub proximity: MetricValue,
    pub confidence: MetricValue,
    pub diversity: MetricValue,
    pub collapse: MetricValue,
    pub private_count: usize,
    pub explained_count: usize,
    pub diversity_excluded: usize,
    pub diversity_variant: DiversityVariant,
    /// `1 − S / 100`, the inverted sparsity used on radar charts.
    pub sparsity_display: Option<f64>,
    pub per_image: Vec<PerImageRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Computes all seven metrics. `tagger` supplies detected tags for
/// feasibility; `text_provider` embeds explanation texts for D and R.
pub fn compute_report(
    cohort: &EvaluationCohort,
    tagger: &dyn EmbeddingProvider,
    text_provider: &dyn EmbeddingProvider,
    variant: DiversityVariant,
) -> Result<MetricReport> {
    let mut warnings = Vec::new();
    let div = diversity(cohort, text_provider, variant)?;
    let sparsity = sparsity(cohort);

    let mut per_image = Vec::with_capacity(cohort.private_count());
    for image in cohort.images() {
        let single = EvaluationCohort {
            images: vec![image.clone()],
        };
        let mut scratch = Vec::new();
        per_image.push(PerImageRow {
            image_id: image.image_id.clone(),
            explanations: image.best.len(),
            feasibility: feasibility(&single, tagger)?.value(),
            sparsity: self::sparsity(&single).value(),
            proximity: self::proximity(&single, &mut scratch).value(),
            confidence: confidence_metric(&single).value(),
            diversity: div
                .per_image
                .iter()
                .find(|(id, _)| *id == image.image_id)
                .map(|(_, t)| *t),
        });
    }

    Ok(MetricReport {
        validity: validity(cohort),
        feasibility: feasibility(cohort, tagger)?,
        sparsity_display: sparsity.value().map(|s| 1.0 - s / SPARSITY_DISPLAY_MAX),
        sparsity,
        proximity: proximity(cohort, &mut warnings),
        confidence: confidence_metric(cohort),
        diversity: div.value,
        collapse: collapse(cohort, text_provider, &mut warnings)?,
        private_count: cohort.private_count(),
        explained_count: cohort.explained_count(),
        diversity_excluded: div.excluded,
        diversity_variant: variant,
        per_image,
        warnings,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricReport {
    /// `(short name, value)` in V, F, S, P, C, D, R order.
    pub fn named(&self) -> [(&'static str, &MetricValue); 7] {
        [
            ("V", &self.validity),
            ("F", &self.feasibility),
            ("S", &self.sparsity),
            ("P", &self.proximity),
            ("C", &self.confidence),
            ("D", &self.diversity),
            ("R", &self.collapse),
        ]
    }

    pub fn per_image_csv(&self) -> String {
        let mut out = String::from(
            "image_id,explanations,feasibility,sparsity,proximity,confidence,diversity\n",
        );
        for r in &self.per_image {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.image_id,
                r.explanations,
                fmt_opt(r.feasibility),
                fmt_opt(r.sparsity),
                fmt_opt(r.proximity),
                fmt_opt(r.confidence),
                fmt_opt(r.diversity)
            );
        }
        out
    }

    /// Radar-chart rows `metric,method,value`; sparsity uses the inverted
    /// display scale, undefined metrics have an empty value.
    pub fn radar_rows(&self, method: &str) -> String {
        let mut out = String::new();
        for (name, value) in self.named() {
            let v = if name == "S" {
                self.sparsity_display
            } else {
                value.value()
            };
            let _ = writeln!(out, "{name},{method},{}", fmt_opt(v));
        }
        out
    }
}
