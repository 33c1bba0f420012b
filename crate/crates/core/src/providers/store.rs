use std::collections::HashMap;
use std::sync::Arc;

use super::EmbeddingProvider;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, TextEmbeddingTable};
use crate::model::{canonicalize_tag, ImageRecord};

/// Serves stored image embeddings and a precomputed text-embedding table.
#[derive(Debug, Clone)]
pub struct ManifestProvider {
    manifest: Arc<DatasetManifest>,
    index: HashMap<String, usize>,
    texts: TextEmbeddingTable,
    anchor: String,
}

impl ManifestProvider {
    pub fn new(
        manifest: Arc<DatasetManifest>,
        texts: TextEmbeddingTable,
        anchor_prompt: &str,
    ) -> Result<Self> {
        if texts.dimension != manifest.dimension {
            return Err(Error::DimensionMismatch {
                expected: manifest.dimension,
                found: texts.dimension,
            });
        }
        let index = manifest
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        Ok(Self {
            manifest,
            index,
            texts,
            anchor: canonicalize_tag(anchor_prompt)?,
        })
    }

    fn record(&self, image_id: &str) -> Result<&ImageRecord> {
        self.index
            .get(image_id)
            .map(|&i| &self.manifest.records[i])
            .ok_or_else(|| Error::MissingRecord(image_id.to_owned()))
    }
}

impl EmbeddingProvider for ManifestProvider {
    fn dimension(&self) -> usize {
        self.manifest.dimension
    }

    fn anchor_prompt(&self) -> &str {
        &self.anchor
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        self.texts
            .get(text)
            .cloned()
            .ok_or_else(|| Error::MissingEmbedding(text.to_owned()))
    }

    fn embed_image(&self, image_id: &str) -> Result<EmbeddingVector> {
        Ok(self.record(image_id)?.embedding.clone())
    }

    fn detect_tags(&self, image_id: &str) -> Result<Vec<String>> {
        Ok(self.record(image_id)?.detected_tags.clone())
    }
}
