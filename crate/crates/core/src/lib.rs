//! Concept-based counterfactual explanations for linear privacy classifiers
//! over joint image-text embeddings.
//!
//! An image embedding `x` is pushed along the directions of its own tags,
//! `x̂ = x − e_c`; scenarios that flip a private prediction to public are
//! ranked on a Pareto front and a diverse subset is reported.

pub mod arithmetic;
pub mod classifier;
pub mod cli;
pub mod countex;
pub mod embedding;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod providers;
pub mod robustness;
pub mod scenarios;
pub mod selection;

pub use embedding::EmbeddingVector;
pub use error::{Error, Result};
pub use manifest::{DatasetManifest, TextEmbeddingTable};
pub use model::{Candidate, ExplanationSet, ImageRecord, PrivacyLabel, Scenario};
