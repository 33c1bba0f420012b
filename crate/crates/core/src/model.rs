//! Shared domain types: labels, tags, image records, scenarios, candidates
//! and explanation sets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

/// Binary privacy label, serialized as `"pr"` / `"pu"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrivacyLabel {
    #[serde(rename = "pr")]
    Private,
    #[serde(rename = "pu")]
    Public,
}

impl PrivacyLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PrivacyLabel::Private => "pr",
            PrivacyLabel::Public => "pu",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            PrivacyLabel::Private => PrivacyLabel::Public,
            PrivacyLabel::Public => PrivacyLabel::Private,
        }
    }
}

impl fmt::Display for PrivacyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrivacyLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pr" => Ok(PrivacyLabel::Private),
            "pu" => Ok(PrivacyLabel::Public),
            other => Err(Error::Invalid(format!(
                "unknown label {other:?}, expected \"pr\" or \"pu\""
            ))),
        }
    }
}

/// Lowercases, trims and collapses internal whitespace runs to one space.
pub fn canonicalize_tag(raw: &str) -> Result<String> {
    let canonical = raw
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ");
    if canonical.is_empty() {
        return Err(Error::Tag(format!("empty tag (raw input {raw:?})")));
    }
    Ok(canonical)
}

/// Canonicalizes every tag and drops later duplicates, keeping first-seen order.
pub fn canonicalize_tags<S: AsRef<str>>(raw: &[S]) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::with_capacity(raw.len());
    for tag in raw {
        let c = canonicalize_tag(tag.as_ref())?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub label: PrivacyLabel,
    pub embedding: EmbeddingVector,
    /// Tags summarizing the image description; scenarios are drawn from these.
    pub extracted_tags: Vec<String>,
    /// Open-set tagger output, used for groundedness checks.
    pub detected_tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl ImageRecord {
    /// Builds a record, canonicalizing both tag lists.
    pub fn new(
        id: impl Into<String>,
        label: PrivacyLabel,
        embedding: EmbeddingVector,
        extracted_tags: &[impl AsRef<str>],
        detected_tags: &[impl AsRef<str>],
    ) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            label,
            embedding,
            extracted_tags: canonicalize_tags(extracted_tags)?,
            detected_tags: canonicalize_tags(detected_tags)?,
            description: None,
        })
    }
}

/// A duplicate-free, lexicographically sorted, non-empty set of tags.
///
/// Two scenarios with the same tags in a different order are the same
/// scenario.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Scenario(Vec<String>);

impl Scenario {
    pub fn new<S: AsRef<str>>(tags: &[S]) -> Result<Self> {
        let mut tags = canonicalize_tags(tags)?;
        if tags.is_empty() {
            return Err(Error::Invalid("scenario needs at least one tag".into()));
        }
        tags.sort();
        Ok(Self(tags))
    }

    /// Caller guarantees `tags` are canonical, unique and sorted.
    pub(crate) fn from_sorted_unchecked(tags: Vec<String>) -> Self {
        debug_assert!(!tags.is_empty());
        debug_assert!(tags.windows(2).all(|w| w[0] < w[1]));
        Self(tags)
    }

    pub fn tags(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.0.iter().any(|t| t == tag)
    }

    /// Text prompt for the scenario: tags joined by `", "`.
    pub fn prompt(&self) -> String {
        self.0.join(", ")
    }
}

impl TryFrom<Vec<String>> for Scenario {
    type Error = Error;

    fn try_from(tags: Vec<String>) -> Result<Self> {
        Scenario::new(&tags)
    }
}

impl From<Scenario> for Vec<String> {
    fn from(s: Scenario) -> Self {
        s.0
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.prompt())
    }
}

/// One probed scenario: the counterfactual embedding and how the classifier
/// sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub scenario: Scenario,
    pub counterfactual_embedding: EmbeddingVector,
    pub predicted_label: PrivacyLabel,
    /// Probability of `predicted_label`.
    pub confidence: f64,
    /// Cosine similarity to the original embedding (0 when undefined).
    pub proximity: f64,
}

impl Candidate {
    /// Number of concepts used to build the counterfactual.
    pub fn sparsity(&self) -> usize {
        self.scenario.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplanationStatus {
    /// At least one prediction-flipping counterfactual was selected.
    Explained,
    /// Scenarios were probed but none flipped the prediction.
    NoFlip,
    /// The image has no extracted tags, so no scenarios exist.
    NoScenarios,
    /// The image is outside the explained cohort (not a correctly
    /// classified private image).
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetMethod {
    Exact,
    Greedy,
}

/// Everything produced while explaining one image.
///
/// Nesting invariant: `best ⊆ pareto ⊆ candidates_valid ⊆ candidates_all`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSet {
    pub image_id: String,
    pub status: ExplanationStatus,
    pub original_label: PrivacyLabel,
    pub original_confidence: f64,
    pub candidates_all: Vec<Candidate>,
    pub candidates_valid: Vec<Candidate>,
    pub pareto: Vec<Candidate>,
    pub best: Vec<Candidate>,
    /// Sum of pairwise text similarities within `best` (ordered pairs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_method: Option<SubsetMethod>,
    #[serde(default)]
    pub scenarios_truncated: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ExplanationSet {
    pub fn empty(
        image_id: impl Into<String>,
        status: ExplanationStatus,
        original_label: PrivacyLabel,
        original_confidence: f64,
    ) -> Self {
        Self {
            image_id: image_id.into(),
            status,
            original_label,
            original_confidence,
            candidates_all: Vec::new(),
            candidates_valid: Vec::new(),
            pareto: Vec::new(),
            best: Vec::new(),
            subset_objective: None,
            subset_method: None,
            scenarios_truncated: false,
            warnings: Vec::new(),
        }
    }

    /// Whether this image belongs to the correctly-classified private cohort.
    pub fn in_private_cohort(&self) -> bool {
        self.status != ExplanationStatus::Skipped
    }

    /// Checks `best ⊆ pareto ⊆ valid ⊆ all` by scenario identity.
    pub fn is_nested(&self) -> bool {
        fn subset(inner: &[Candidate], outer: &[Candidate]) -> bool {
            inner
                .iter()
                .all(|c| outer.iter().any(|o| o.scenario == c.scenario))
        }
        subset(&self.best, &self.pareto)
            && subset(&self.pareto, &self.candidates_valid)
            && subset(&self.candidates_valid, &self.candidates_all)
    }
}
