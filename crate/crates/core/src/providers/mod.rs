//! Sources of text embeddings, image embeddings and tags.
//!
//! Three backends implement [`EmbeddingProvider`]:
//!
//! - [`ManifestProvider`] serves precomputed vectors from a manifest and a
//!   text-embedding table.
//! - [`SyntheticProvider`] is an exactly additive compositional oracle:
//!   every phrase maps to a seeded unit vector, a comma-joined prompt maps to
//!   the sum of its phrases and the anchor prompt maps to zero.
//! - [`RemoteProvider`] talks to the HTTP bridge that wraps real encoders.

mod remote;
mod store;
mod synthetic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, TextEmbeddingTable};
use crate::model::canonicalize_tag;

pub use remote::{
    BridgeEnvelope, ImageSource, InMemoryImages, RemoteOptions, RemoteProvider, ENDPOINT_ENV,
};
pub use store::ManifestProvider;
pub use synthetic::{generate_world, SyntheticProvider, WorldConfig};

pub const DEFAULT_ANCHOR_PROMPT: &str = "a photo of object";
pub const DEFAULT_INSTRUCTION_PROMPT: &str = "Describe this image as detailed as possible";

/// Uniform access to the joint embedding space and the image tagger.
///
/// Implementations are read-only after construction and must be
/// deterministic for a fixed configuration.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    /// Concept-neutral prompt used as the origin of concept directions.
    fn anchor_prompt(&self) -> &str;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector>;

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.embed_text(t)).collect()
    }

    fn embed_image(&self, image_id: &str) -> Result<EmbeddingVector>;

    /// Canonical tagger output for the image.
    fn detect_tags(&self, image_id: &str) -> Result<Vec<String>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Manifest,
    Synthetic,
    Remote,
}

impl std::str::FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manifest" => Ok(Self::Manifest),
            "synthetic" => Ok(Self::Synthetic),
            "remote" => Ok(Self::Remote),
            other => Err(Error::Config(format!("unknown provider kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub anchor_prompt: String,
    /// Seed of the synthetic oracle.
    pub seed: u64,
    /// Magnitude of the per-image residual added by the synthetic oracle.
    pub residual: f64,
    pub endpoint: Option<String>,
    pub instruction_prompt: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Synthetic,
            anchor_prompt: DEFAULT_ANCHOR_PROMPT.to_owned(),
            seed: 0,
            residual: 0.0,
            endpoint: None,
            instruction_prompt: DEFAULT_INSTRUCTION_PROMPT.to_owned(),
        }
    }
}

impl ProviderConfig {
    pub fn synthetic(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        canonicalize_tag(&self.anchor_prompt)
            .map_err(|_| Error::Config("anchor prompt must be non-empty".into()))?;
        if !(self.residual.is_finite() && self.residual >= 0.0) {
            return Err(Error::Config(
                "residual magnitude must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Instantiates the configured backend.
    ///
    /// `dimension` is only consulted by the synthetic oracle when no manifest
    /// is supplied; the remote provider falls back to the manifest for image
    /// embeddings and tags when it has no image source.
    pub fn build(
        &self,
        manifest: Option<Arc<DatasetManifest>>,
        text_table: Option<TextEmbeddingTable>,
        dimension: Option<usize>,
    ) -> Result<Box<dyn EmbeddingProvider>> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Synthetic => {
                let dim = manifest
                    .as_ref()
                    .map(|m| m.dimension)
                    .or(dimension)
                    .ok_or_else(|| Error::Config("synthetic provider needs a dimension".into()))?;
                let mut p = SyntheticProvider::new(dim, self.seed)
                    .with_anchor(&self.anchor_prompt)?
                    .with_residual(self.residual);
                if let Some(m) = manifest {
                    p = p.with_manifest(m)?;
                }
                Box::new(p)
            }
            ProviderKind::Manifest => {
                let manifest = manifest
                    .ok_or_else(|| Error::Config("manifest provider needs a manifest".into()))?;
                let table =
                    text_table.unwrap_or_else(|| TextEmbeddingTable::new(manifest.dimension));
                Box::new(ManifestProvider::new(manifest, table, &self.anchor_prompt)?)
            }
            ProviderKind::Remote => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .or_else(|| std::env::var(ENDPOINT_ENV).ok())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "remote provider needs --endpoint or ${ENDPOINT_ENV}"
                        ))
                    })?;
                let opts = RemoteOptions {
                    anchor_prompt: self.anchor_prompt.clone(),
                    instruction_prompt: self.instruction_prompt.clone(),
                    ..RemoteOptions::default()
                };
                let mut p = RemoteProvider::connect(&endpoint, opts)?;
                if let Some(m) = manifest {
                    p = p.with_manifest(m);
                }
                Box::new(p)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = ProviderConfig::synthetic(1);
        assert!(c.validate().is_ok());
        c.anchor_prompt = "  ".into();
        assert!(c.validate().is_err());
        c.anchor_prompt = DEFAULT_ANCHOR_PROMPT.into();
        c.residual = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn synthetic_needs_dimension() {
        let c = ProviderConfig::synthetic(1);
        assert!(c.build(None, None, None).is_err());
        assert_eq!(c.build(None, None, Some(5)).unwrap().dimension(), 5);
    }

    #[test]
    fn remote_needs_endpoint() {
        let c = ProviderConfig {
            kind: ProviderKind::Remote,
            ..ProviderConfig::default()
        };
        if std::env::var(ENDPOINT_ENV).is_err() {
            assert!(matches!(c.build(None, None, None), Err(Error::Config(_))));
        }
    }
}
