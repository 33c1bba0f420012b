//! Concept directions in the joint space, counterfactual embeddings, and
//! the compositionality probes used to sanity-check an encoder.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::model::{canonicalize_tag, Scenario};
use crate::providers::EmbeddingProvider;

/// How a multi-tag scenario becomes a direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionMode {
    /// Embed the comma-joined scenario prompt once.
    #[default]
    JoinedPrompt,
    /// Sum the per-tag offsets from the anchor (ablation).
    PerTagSum,
}

/// Unit vector pointing from the anchor prompt to a scenario prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptDirection {
    pub scenario: Scenario,
    pub direction: EmbeddingVector,
}

impl ConceptDirection {
    /// Normalizes `raw`; fails on the zero vector.
    pub fn from_raw(scenario: Scenario, raw: &EmbeddingVector) -> Result<Self> {
        let direction = raw
            .normalized()
            .ok_or_else(|| Error::DegenerateDirection(scenario.prompt()))?;
        Ok(Self {
            scenario,
            direction,
        })
    }
}

pub fn concept_direction(
    provider: &dyn EmbeddingProvider,
    scenario: &Scenario,
    mode: DirectionMode,
) -> Result<ConceptDirection> {
    let anchor = provider.embed_text(provider.anchor_prompt())?;
    let raw = match mode {
        DirectionMode::JoinedPrompt => &provider.embed_text(&scenario.prompt())? - &anchor,
        DirectionMode::PerTagSum => {
            let mut acc = EmbeddingVector::zeros(provider.dimension());
            for tag in scenario.tags() {
                acc.add_scaled(&(&provider.embed_text(tag)? - &anchor), 1.0);
            }
            acc
        }
    };
    ConceptDirection::from_raw(scenario.clone(), &raw)
}

/// `x − direction`, with no re-normalization.
pub fn apply_counterfactual(
    x: &EmbeddingVector,
    dir: &ConceptDirection,
) -> Result<EmbeddingVector> {
    x.check_dimension(dir.direction.dimension())?;
    Ok(x - &dir.direction)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityItem {
    pub phrases: Vec<String>,
    /// Cosine similarity between the joined-prompt embedding and the sum of
    /// the individual phrase embeddings.
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub items: Vec<LinearityItem>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Checks whether embedding a joined prompt approximates summing its parts.
///
/// Each group (pair, triplet, ...) is joined with `", "`.
pub fn linearity_probe(
    provider: &dyn EmbeddingProvider,
    groups: &[Vec<String>],
) -> Result<LinearityReport> {
    if groups.is_empty() {
        return Err(Error::Invalid(
            "linearity probe needs at least one group".into(),
        ));
    }
    let mut items = Vec::with_capacity(groups.len());
    for phrases in groups {
        if phrases.is_empty() {
            return Err(Error::Invalid("empty phrase group".into()));
        }
        let joined = provider.embed_text(&phrases.join(", "))?;
        let mut sum = EmbeddingVector::zeros(provider.dimension());
        for p in phrases {
            sum.add_scaled(&provider.embed_text(p)?, 1.0);
        }
        let cosine = joined.cosine(&sum).ok_or_else(|| {
            Error::Invalid(format!(
                "zero embedding while probing {:?}",
                phrases.join(", ")
            ))
        })?;
        items.push(LinearityItem {
            phrases: phrases.clone(),
            cosine,
        });
    }
    let (mean, std) = mean_std(items.iter().map(|i| i.cosine));
    Ok(LinearityReport { items, mean, std })
}

pub(crate) fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptRole {
    Added,
    Removed,
    /// Reference concept the tagger finds in the image.
    Related,
    /// Reference concept absent from the image.
    Unrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptShift {
    pub concept: String,
    pub role: ConceptRole,
    pub before: Option<f64>,
    pub after: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddRemoveReport {
    pub image_id: String,
    pub shifts: Vec<ConceptShift>,
}

impl AddRemoveReport {
    pub fn shift(&self, concept: &str) -> Option<&ConceptShift> {
        self.shifts.iter().find(|s| s.concept == concept)
    }
}

/// Edits an image embedding by adding and removing concept directions and
/// reports how image–concept similarities move.
pub fn add_remove_probe(
    provider: &dyn EmbeddingProvider,
    image_id: &str,
    add: &[String],
    remove: &[String],
    reference_concepts: &[String],
) -> Result<AddRemoveReport> {
    let x = provider.embed_image(image_id)?;
    let present = provider.detect_tags(image_id)?;
    let mut edited = x.clone();

    let mut concepts: Vec<(String, ConceptRole)> = Vec::new();
    for (list, role, sign) in [
        (add, ConceptRole::Added, 1.0),
        (remove, ConceptRole::Removed, -1.0),
    ] {
        for phrase in list {
            let scenario = Scenario::new(&[phrase])?;
            let dir = concept_direction(provider, &scenario, DirectionMode::JoinedPrompt)?;
            edited.add_scaled(&dir.direction, sign);
            concepts.push((canonicalize_tag(phrase)?, role));
        }
    }
    for phrase in reference_concepts {
        let c = canonicalize_tag(phrase)?;
        if concepts.iter().any(|(k, _)| *k == c) {
            continue;
        }
        let role = if present.contains(&c) {
            ConceptRole::Related
        } else {
            ConceptRole::Unrelated
        };
        concepts.push((c, role));
    }

    let mut shifts = Vec::with_capacity(concepts.len());
    for (concept, role) in concepts {
        let t = provider.embed_text(&concept)?;
        let before = x.cosine(&t);
        let after = edited.cosine(&t);
        let delta = before.zip(after).map(|(b, a)| a - b);
        shifts.push(ConceptShift {
            concept,
            role,
            before,
            after,
            delta,
        });
    }
    Ok(AddRemoveReport {
        image_id: image_id.to_owned(),
        shifts,
    })
}
