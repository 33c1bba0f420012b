//! Validity filtering, Pareto-front extraction and diversity-driven subset
//! selection, plus the per-image explanation pipeline that ties them
//! together.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arithmetic::{apply_counterfactual, concept_direction, DirectionMode};
use crate::classifier::{ClassifierWeights, Prediction};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::model::{
    Candidate, ExplanationSet, ExplanationStatus, ImageRecord, PrivacyLabel, SubsetMethod,
};
use crate::providers::EmbeddingProvider;
use crate::scenarios::{generate_scenarios, ScenarioConfig, ScenarioStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Confidence,
    Proximity,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(Self::Confidence),
            "proximity" => Ok(Self::Proximity),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

/// Objective values of one candidate; every component is maximized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectiveVector(pub Vec<f64>);

impl ObjectiveVector {
    pub fn of(candidate: &Candidate, objectives: &[Objective]) -> Self {
        Self(
            objectives
                .iter()
                .map(|o| match o {
                    Objective::Confidence => candidate.confidence,
                    Objective::Proximity => candidate.proximity,
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub objectives: Vec<Objective>,
    /// Number of explanations kept per image.
    pub q: usize,
    /// Largest front searched exhaustively; bigger fronts use greedy search.
    pub subset_exact_limit: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            objectives: vec![Objective::Confidence, Objective::Proximity],
            q: 3,
            subset_exact_limit: 15,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::Config("q must be >= 1".into()));
        }
        if self.objectives.len() < 2 {
            return Err(Error::Config("at least two objectives are required".into()));
        }
        Ok(())
    }
}

/// Keeps candidates whose label differs from the original prediction.
pub fn filter_valid(original: &Prediction, candidates: &[Candidate]) -> Vec<Candidate> {
    candidates
        .iter()
        .filter(|c| c.predicted_label != original.label)
        .cloned()
        .collect()
}

/// `a` dominates `b`: no worse everywhere and strictly better somewhere.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> Result<bool> {
    if a.0.len() != b.0.len() {
        return Err(Error::ObjectiveLength(a.0.len(), b.0.len()));
    }
    let mut strictly_better = false;
    for (x, y) in a.0.iter().zip(&b.0) {
        if x < y {
            return Ok(false);
        }
        if x > y {
            strictly_better = true;
        }
    }
    Ok(strictly_better)
}

/// Indices of non-dominated vectors, in input order.
///
/// Sorting lexicographically descending guarantees that any dominator of a
/// point precedes it, so each point only needs checking against the front
/// accepted so far.
pub fn pareto_front_indices(points: &[ObjectiveVector]) -> Result<Vec<usize>> {
    let Some(first) = points.first() else {
        return Ok(Vec::new());
    };
    let m = first.0.len();
    if let Some(bad) = points.iter().find(|p| p.0.len() != m) {
        return Err(Error::ObjectiveLength(m, bad.0.len()));
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        for (a, b) in points[i].0.iter().zip(&points[j].0) {
            match b.partial_cmp(a).unwrap_or(Ordering::Equal) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        i.cmp(&j)
    });

    let mut front: Vec<usize> = Vec::new();
    for i in order {
        let mut dominated = false;
        for &f in &front {
            if dominates(&points[f], &points[i])? {
                dominated = true;
                break;
            }
        }
        if !dominated {
            front.push(i);
        }
    }
    front.sort_unstable();
    Ok(front)
}

pub fn pareto_front(candidates: &[Candidate], config: &SelectionConfig) -> Result<Vec<Candidate>> {
    let points: Vec<ObjectiveVector> = candidates
        .iter()
        .map(|c| ObjectiveVector::of(c, &config.objectives))
        .collect();
    Ok(pareto_front_indices(&points)?
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect())
}

/// Sum of pairwise similarities over ordered pairs `i != j` of `subset`.
pub fn subset_similarity(similarity: &[Vec<f64>], subset: &[usize]) -> f64 {
    let mut total = 0.0;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            total += similarity[i][j];
        }
    }
    2.0 * total
}

/// Exhaustive minimizer of [`subset_similarity`] over all `q`-subsets.
/// Ties keep the lexicographically first subset.
pub fn exact_subset(similarity: &[Vec<f64>], q: usize) -> (Vec<usize>, f64) {
    let n = similarity.len();
    if q >= n {
        let all: Vec<usize> = (0..n).collect();
        let v = subset_similarity(similarity, &all);
        return (all, v);
    }
    let mut idx: Vec<usize> = (0..q).collect();
    let mut best = (idx.clone(), subset_similarity(similarity, &idx));
    while let Some(pos) = (0..q).rev().find(|&p| idx[p] < n - q + p) {
        idx[pos] += 1;
        for p in pos + 1..q {
            idx[p] = idx[p - 1] + 1;
        }
        let v = subset_similarity(similarity, &idx);
        if v < best.1 {
            best = (idx.clone(), v);
        }
    }
    best
}

/// Greedy farthest-point selection: start from the least similar pair, then
/// repeatedly add the item with the smallest total similarity to the chosen
/// set.
pub fn greedy_subset(similarity: &[Vec<f64>], q: usize) -> (Vec<usize>, f64) {
    let n = similarity.len();
    if q >= n || q < 2 {
        let chosen: Vec<usize> = (0..q.min(n)).collect();
        let v = subset_similarity(similarity, &chosen);
        return (chosen, v);
    }
    let mut seed = (0, 1);
    for i in 0..n {
        for j in i + 1..n {
            if similarity[i][j] < similarity[seed.0][seed.1] {
                seed = (i, j);
            }
        }
    }
    let mut chosen = vec![seed.0, seed.1];
    while chosen.len() < q {
        let next = (0..n)
            .filter(|i| !chosen.contains(i))
            .map(|i| (i, chosen.iter().map(|&c| similarity[i][c]).sum::<f64>()))
            .min_by(|a, b| {
                a.1.partial_cmp(&b.1)
                    .unwrap_or(Ordering::Equal)
                    .then(a.0.cmp(&b.0))
            })
            .map(|(i, _)| i)
            .expect("n > chosen.len()");
        chosen.push(next);
    }
    chosen.sort_unstable();
    let v = subset_similarity(similarity, &chosen);
    (chosen, v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiverseSubset {
    pub members: Vec<Candidate>,
    pub objective: f64,
    pub method: SubsetMethod,
}

/// Pairwise cosine similarities of scenario-prompt embeddings. Undefined
/// similarities (zero vectors) count as 0.
pub fn text_similarity(
    text_provider: &dyn EmbeddingProvider,
    candidates: &[Candidate],
) -> Result<Vec<Vec<f64>>> {
    let prompts: Vec<String> = candidates.iter().map(|c| c.scenario.prompt()).collect();
    let emb = text_provider.embed_texts(&prompts)?;
    let n = emb.len();
    let mut sim = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = emb[i].cosine(&emb[j]).unwrap_or(0.0);
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }
    Ok(sim)
}

/// Picks `q` front members minimizing total pairwise text similarity.
pub fn select_diverse_subset(
    front: &[Candidate],
    text_provider: &dyn EmbeddingProvider,
    config: &SelectionConfig,
) -> Result<DiverseSubset> {
    if front.is_empty() {
        return Err(Error::Invalid("cannot select from an empty front".into()));
    }
    let sim = text_similarity(text_provider, front)?;
    let (chosen, objective, method) = if front.len() <= config.q {
        let all: Vec<usize> = (0..front.len()).collect();
        let v = subset_similarity(&sim, &all);
        (all, v, SubsetMethod::Exact)
    } else if front.len() <= config.subset_exact_limit {
        let (c, v) = exact_subset(&sim, config.q);
        (c, v, SubsetMethod::Exact)
    } else {
        let (c, v) = greedy_subset(&sim, config.q);
        (c, v, SubsetMethod::Greedy)
    };
    Ok(DiverseSubset {
        members: chosen.into_iter().map(|i| front[i].clone()).collect(),
        objective,
        method,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub scenarios: ScenarioConfig,
    pub selection: SelectionConfig,
    pub direction_mode: DirectionMode,
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenarios.validate()?;
        self.selection.validate()
    }
}

/// Explains why `record` is classified private.
///
/// The image embedding is taken from the record. Scenario directions come
/// from `provider`; explanation-text similarities for subset selection come
/// from `text_provider`, which may be the same provider.
pub fn explain_image(
    record: &ImageRecord,
    weights: &ClassifierWeights,
    provider: &dyn EmbeddingProvider,
    text_provider: &dyn EmbeddingProvider,
    config: &ExplainConfig,
) -> Result<ExplanationSet> {
    config.validate()?;
    let x = &record.embedding;
    let original = weights.predict(x)?;
    if record.label != PrivacyLabel::Private || original.label != PrivacyLabel::Private {
        return Ok(ExplanationSet::empty(
            &record.id,
            ExplanationStatus::Skipped,
            original.label,
            original.confidence,
        ));
    }

    let scenarios = generate_scenarios(&record.extracted_tags, &config.scenarios)?;
    let mut set = ExplanationSet::empty(
        &record.id,
        ExplanationStatus::NoScenarios,
        original.label,
        original.confidence,
    );
    set.scenarios_truncated = scenarios.status == ScenarioStatus::Truncated;
    if scenarios.status == ScenarioStatus::NoScenarios {
        return Ok(set);
    }

    for scenario in scenarios.scenarios {
        let dir = match concept_direction(provider, &scenario, config.direction_mode) {
            Ok(d) => d,
            Err(Error::DegenerateDirection(p)) => {
                set.warnings
                    .push(format!("dropped degenerate direction for {p:?}"));
                continue;
            }
            Err(e) => return Err(e),
        };
        let x_hat = apply_counterfactual(x, &dir)?;
        set.candidates_all.push(make_candidate(
            x,
            x_hat,
            scenario,
            weights,
            &mut set.warnings,
        )?);
    }

    set.candidates_valid = filter_valid(&original, &set.candidates_all);
    if set.candidates_valid.is_empty() {
        set.status = ExplanationStatus::NoFlip;
        return Ok(set);
    }
    set.pareto = pareto_front(&set.candidates_valid, &config.selection)?;
    let subset = select_diverse_subset(&set.pareto, text_provider, &config.selection)?;
    set.best = subset.members;
    set.subset_objective = Some(subset.objective);
    set.subset_method = Some(subset.method);
    set.status = ExplanationStatus::Explained;
    Ok(set)
}

fn make_candidate(
    x: &EmbeddingVector,
    x_hat: EmbeddingVector,
    scenario: crate::model::Scenario,
    weights: &ClassifierWeights,
    warnings: &mut Vec<String>,
) -> Result<Candidate> {
    let pred = weights.predict(&x_hat)?;
    let proximity = x.cosine(&x_hat).unwrap_or_else(|| {
        warnings.push(format!(
            "zero-norm counterfactual for {:?}",
            scenario.prompt()
        ));
        0.0
    });
    Ok(Candidate {
        scenario,
        counterfactual_embedding: x_hat,
        predicted_label: pred.label,
        confidence: pred.confidence,
        proximity,
    })
}

/// Explains every record of `manifest`, preserving manifest order.
///
/// `workers > 1` evaluates images in parallel; results are identical to the
/// sequential run.
pub fn explain_manifest(
    manifest: &DatasetManifest,
    weights: &ClassifierWeights,
    provider: &dyn EmbeddingProvider,
    text_provider: &dyn EmbeddingProvider,
    config: &ExplainConfig,
    workers: usize,
) -> Result<Vec<ExplanationSet>> {
    if weights.dimension() != manifest.dimension {
        return Err(Error::DimensionMismatch {
            expected: manifest.dimension,
            found: weights.dimension(),
        });
    }
    let run = |r: &ImageRecord| explain_image(r, weights, provider, text_provider, config);
    if workers <= 1 {
        return manifest.records.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| manifest.records.par_iter().map(run).collect())
}
