//! Optimization baseline: learn one weight per concept of a fixed library so
//! that `x + Σ w_c e_c` flips the classifier to public.
//!
//! The objective is
//!
//! ```text
//! CE(f(x̂), public) + λ_id ‖Σ w_c e_c‖² + λ₁ ‖w‖₁ + λ₂ ‖w‖²
//! ```
//!
//! minimized by plain gradient descent from a seeded Xavier-uniform start,
//! stopping as soon as the prediction flips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arithmetic::{concept_direction, DirectionMode};
use crate::classifier::{sigmoid, ClassifierWeights};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::metrics::ScoredExplanation;
use crate::model::{canonicalize_tags, PrivacyLabel, Scenario};
use crate::providers::EmbeddingProvider;

/// Concepts and their unit directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptLibrary {
    concepts: Vec<String>,
    directions: Vec<EmbeddingVector>,
}

impl ConceptLibrary {
    /// Embeds every concept as a single-tag scenario direction.
    pub fn build(provider: &dyn EmbeddingProvider, concepts: &[String]) -> Result<Self> {
        let concepts = canonicalize_tags(concepts)?;
        let directions = concepts
            .iter()
            .map(|c| {
                let s = Scenario::new(&[c])?;
                Ok(concept_direction(provider, &s, DirectionMode::JoinedPrompt)?.direction)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_directions(concepts, directions)
    }

    pub fn from_directions(
        concepts: Vec<String>,
        directions: Vec<EmbeddingVector>,
    ) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::Invalid("concept library is empty".into()));
        }
        if concepts.len() != directions.len() {
            return Err(Error::Invalid("one direction per concept required".into()));
        }
        let canonical = canonicalize_tags(&concepts)?;
        if canonical.len() != concepts.len() {
            return Err(Error::Invalid(
                "concept library has duplicate concepts".into(),
            ));
        }
        let dim = directions[0].dimension();
        for (c, d) in canonical.iter().zip(&directions) {
            d.check_dimension(dim)?;
            if (d.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!(
                    "direction of {c:?} is not unit length"
                )));
            }
        }
        Ok(Self {
            concepts: canonical,
            directions,
        })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn directions(&self) -> &[EmbeddingVector] {
        &self.directions
    }

    pub fn dimension(&self) -> usize {
        self.directions[0].dimension()
    }

    /// `Σ w_c e_c`.
    pub fn combine(&self, w: &[f64]) -> EmbeddingVector {
        let mut acc = EmbeddingVector::zeros(self.dimension());
        for (wc, e) in w.iter().zip(&self.directions) {
            acc.add_scaled(e, *wc);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightInit {
    #[default]
    Xavier,
}

/// Which weights count toward sparsity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparsityMode {
    /// `w_c > threshold`.
    #[default]
    Signed,
    /// `|w_c| > threshold`.
    Absolute,
}

/// Which end of the weight vector explains the private class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ranking {
    #[default]
    MostNegative,
    MostPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountexConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub lambda_identity: f64,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub weight_threshold: f64,
    pub seed: u64,
    pub init: WeightInit,
    pub sparsity_mode: SparsityMode,
    pub ranking: Ranking,
}

impl Default for CountexConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            max_iterations: 100,
            lambda_identity: 0.1,
            lambda_l1: 0.1,
            lambda_l2: 0.1,
            weight_threshold: 0.1,
            seed: 0,
            init: WeightInit::Xavier,
            sparsity_mode: SparsityMode::Signed,
            ranking: Ranking::MostNegative,
        }
    }
}

impl CountexConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.learning_rate,
            self.lambda_identity,
            self.lambda_l1,
            self.lambda_l2,
        ];
        if self.learning_rate.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
            || rates.iter().any(|r| !r.is_finite() || *r < 0.0)
        {
            return Err(Error::Config(
                "learning rate must be positive and penalties >= 0".into(),
            ));
        }
        if !self.weight_threshold.is_finite() || self.weight_threshold < 0.0 {
            return Err(Error::Config("weight threshold must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub identity: f64,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

/// Loss terms at concept weights `w`.
pub fn total_loss(
    x: &EmbeddingVector,
    classifier: &ClassifierWeights,
    library: &ConceptLibrary,
    config: &CountexConfig,
    w: &[f64],
) -> Result<LossBreakdown> {
    let shift = library.combine(w);
    let x_hat = x + &shift;
    let (cross_entropy, _) = classifier.loss_and_gradient(&x_hat, PrivacyLabel::Public)?;
    let identity = config.lambda_identity * shift.dot(&shift);
    let l1 = config.lambda_l1 * w.iter().map(|v| v.abs()).sum::<f64>();
    let l2 = config.lambda_l2 * w.iter().map(|v| v * v).sum::<f64>();
    Ok(LossBreakdown {
        cross_entropy,
        identity,
        l1,
        l2,
        total: cross_entropy + identity + l1 + l2,
    })
}

/// Analytic gradient of [`total_loss`] with respect to `w`. The L1
/// subgradient at zero is taken as zero.
pub fn loss_gradient(
    x: &EmbeddingVector,
    classifier: &ClassifierWeights,
    library: &ConceptLibrary,
    config: &CountexConfig,
    w: &[f64],
) -> Result<Vec<f64>> {
    let shift = library.combine(w);
    let x_hat = x + &shift;
    let (_, grad_x) = classifier.loss_and_gradient(&x_hat, PrivacyLabel::Public)?;
    Ok(library
        .directions()
        .iter()
        .zip(w)
        .map(|(e, &wc)| {
            let l1 = if wc > 0.0 {
                1.0
            } else if wc < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad_x.dot(e)
                + 2.0 * config.lambda_identity * shift.dot(e)
                + config.lambda_l1 * l1
                + 2.0 * config.lambda_l2 * wc
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountexSolution {
    pub weights: Vec<f64>,
    pub counterfactual_embedding: EmbeddingVector,
    pub flipped: bool,
    pub iterations_used: usize,
    /// Probability of public at the final counterfactual.
    pub confidence: f64,
    pub final_losses: LossBreakdown,
    /// Cross-entropy term before each update, starting at the initial weights.
    pub cross_entropy_trace: Vec<f64>,
}

fn xavier(len: usize, seed: u64) -> Vec<f64> {
    // Fan-in L, fan-out 1.
    let bound = (6.0 / (len as f64 + 1.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Searches concept weights that flip a private prediction to public.
pub fn optimize(
    x: &EmbeddingVector,
    classifier: &ClassifierWeights,
    library: &ConceptLibrary,
    config: &CountexConfig,
) -> Result<CountexSolution> {
    config.validate()?;
    x.check_dimension(library.dimension())?;
    if classifier.predict(x)?.label != PrivacyLabel::Private {
        return Err(Error::Invalid(
            "baseline expects an embedding classified private".into(),
        ));
    }
    let mut w = match config.init {
        WeightInit::Xavier => xavier(library.len(), config.seed),
    };
    let mut trace = Vec::new();
    let mut iterations_used = 0;
    let mut flipped = false;

    for it in 0..=config.max_iterations {
        let x_hat = x + &library.combine(&w);
        if classifier.predict(&x_hat)?.label != PrivacyLabel::Private {
            flipped = true;
            iterations_used = it;
            break;
        }
        if it == config.max_iterations {
            iterations_used = it;
            break;
        }
        trace.push(total_loss(x, classifier, library, config, &w)?.cross_entropy);
        let grad = loss_gradient(x, classifier, library, config, &w)?;
        for (wc, g) in w.iter_mut().zip(&grad) {
            *wc -= config.learning_rate * g;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                stage: "iteration",
                index: it,
            });
        }
    }

    let final_losses = total_loss(x, classifier, library, config, &w)?;
    if !final_losses.total.is_finite() {
        return Err(Error::Divergence {
            stage: "iteration",
            index: iterations_used,
        });
    }
    let counterfactual_embedding = x + &library.combine(&w);
    let confidence = sigmoid(-classifier.logit(&counterfactual_embedding)?);
    Ok(CountexSolution {
        weights: w,
        counterfactual_embedding,
        flipped,
        iterations_used,
        confidence,
        final_losses,
        cross_entropy_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopConcepts {
    pub concepts: Vec<(String, f64)>,
    /// `k` exceeded the library size.
    pub truncated: bool,
    /// Fewer than `k` selected weights point the explaining way.
    pub degenerate: bool,
}

/// The `k` concepts most responsible for the private class, ties broken by
/// library order.
pub fn top_k_concepts(
    solution: &CountexSolution,
    library: &ConceptLibrary,
    k: usize,
    ranking: Ranking,
) -> TopConcepts {
    let truncated = k > library.len();
    let k = k.min(library.len());
    let key = |w: f64| match ranking {
        Ranking::MostNegative => w,
        Ranking::MostPositive => -w,
    };
    let mut order: Vec<usize> = (0..library.len()).collect();
    order.sort_by(|&a, &b| {
        key(solution.weights[a])
            .partial_cmp(&key(solution.weights[b]))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let concepts: Vec<(String, f64)> = order[..k]
        .iter()
        .map(|&i| (library.concepts()[i].clone(), solution.weights[i]))
        .collect();
    let degenerate = concepts.iter().any(|(_, w)| key(*w) >= 0.0);
    TopConcepts {
        concepts,
        truncated,
        degenerate,
    }
}

/// Number of weights above the threshold (strict).
pub fn countex_sparsity(solution: &CountexSolution, config: &CountexConfig) -> usize {
    solution
        .weights
        .iter()
        .filter(|&&w| match config.sparsity_mode {
            SparsityMode::Signed => w > config.weight_threshold,
            SparsityMode::Absolute => w.abs() > config.weight_threshold,
        })
        .count()
}

/// Metric view of a flipped solution: its top-k concepts as the explanation.
pub fn as_scored_explanation(
    solution: &CountexSolution,
    library: &ConceptLibrary,
    config: &CountexConfig,
    k: usize,
) -> Option<ScoredExplanation> {
    if !solution.flipped {
        return None;
    }
    let top = top_k_concepts(solution, library, k, config.ranking);
    Some(ScoredExplanation {
        tags: top.concepts.into_iter().map(|(c, _)| c).collect(),
        sparsity: countex_sparsity(solution, config),
        counterfactual_embedding: solution.counterfactual_embedding.clone(),
        confidence: solution.confidence,
    })
}
