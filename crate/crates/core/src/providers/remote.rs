//! Client for the model bridge service.
//!
//! Every bridge response is wrapped in a [`BridgeEnvelope`]:
//!
//! ```text
//! {"model_id": "...", "dimension": 768, "payload": {...}, "latency_ms": 12}
//! ```
//!
//! Endpoints used here: `GET /healthz`, `POST /embed_text {"texts"}` →
//! `{"vectors"}`, `POST /embed_image {"image"}` → `{"vector"}`,
//! `POST /tags {"image"}` → `{"tags"}` and
//! `POST /describe_and_extract {"image", "instruction"}` →
//! `{"description", "tags"}`. Images travel as base64 strings.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::EmbeddingProvider;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::model::{canonicalize_tag, canonicalize_tags};

/// Environment variable consulted when no endpoint is given explicitly.
pub const ENDPOINT_ENV: &str = "CONCEPTCF_BRIDGE_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeEnvelope<T> {
    pub model_id: String,
    pub dimension: usize,
    pub payload: T,
    pub latency_ms: u64,
}

#[derive(Debug, Deserialize)]
struct Health {
    model_id: String,
    dimension: usize,
}

#[derive(Deserialize)]
struct Vectors {
    vectors: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct Vector {
    vector: Vec<f64>,
}

#[derive(Deserialize)]
struct Tags {
    tags: Vec<String>,
}

#[derive(Deserialize)]
struct Described {
    description: String,
    tags: Vec<String>,
}

/// Supplies raw encoded image bytes for the bridge. The engine never decodes
/// them.
pub trait ImageSource: Send + Sync {
    fn image_bytes(&self, image_id: &str) -> Result<Vec<u8>>;
}

#[derive(Debug, Clone, Default)]
pub struct InMemoryImages(pub HashMap<String, Vec<u8>>);

impl ImageSource for InMemoryImages {
    fn image_bytes(&self, image_id: &str) -> Result<Vec<u8>> {
        self.0
            .get(image_id)
            .cloned()
            .ok_or_else(|| Error::MissingRecord(image_id.to_owned()))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub anchor_prompt: String,
    pub instruction_prompt: String,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
    /// Maximum concurrent requests issued by batch calls.
    pub max_in_flight: usize,
    /// Texts per `/embed_text` request.
    pub batch_size: usize,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            anchor_prompt: super::DEFAULT_ANCHOR_PROMPT.to_owned(),
            instruction_prompt: super::DEFAULT_INSTRUCTION_PROMPT.to_owned(),
            timeout: Duration::from_secs(30),
            retries: 2,
            max_in_flight: 4,
            batch_size: 32,
        }
    }
}

pub struct RemoteProvider {
    base: String,
    agent: ureq::Agent,
    opts: RemoteOptions,
    model_id: String,
    dimension: usize,
    anchor: String,
    text_cache: Mutex<HashMap<String, EmbeddingVector>>,
    images: Option<Arc<dyn ImageSource>>,
    manifest: Option<Arc<DatasetManifest>>,
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider")
            .field("base", &self.base)
            .field("model_id", &self.model_id)
            .field("dimension", &self.dimension)
            .finish_non_exhaustive()
    }
}

enum Failure {
    /// Worth another attempt (connection trouble, 429, 5xx).
    Retryable(String),
    Fatal(String),
}

impl RemoteProvider {
    /// Connects and queries `/healthz` for the model id and dimension.
    pub fn connect(endpoint: &str, opts: RemoteOptions) -> Result<Self> {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(opts.timeout))
            .http_status_as_error(false)
            .build();
        let mut p = Self {
            base: endpoint.trim_end_matches('/').to_owned(),
            agent: config.into(),
            anchor: canonicalize_tag(&opts.anchor_prompt)?,
            opts,
            model_id: String::new(),
            dimension: 0,
            text_cache: Mutex::new(HashMap::new()),
            images: None,
            manifest: None,
        };
        let health: Health = p.with_retries(|| p.get_once("/healthz"))?;
        if health.dimension == 0 {
            return Err(Error::Transport {
                attempts: 1,
                message: "bridge reported dimension 0".into(),
            });
        }
        p.model_id = health.model_id;
        p.dimension = health.dimension;
        Ok(p)
    }

    pub fn with_images(mut self, images: Arc<dyn ImageSource>) -> Self {
        self.images = Some(images);
        self
    }

    /// Fallback for image embeddings and tags when no image source is set.
    pub fn with_manifest(mut self, manifest: Arc<DatasetManifest>) -> Self {
        self.manifest = Some(manifest);
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Runs the description + tag-extraction step of the bridge.
    pub fn describe_and_extract(&self, image_id: &str) -> Result<(String, Vec<String>)> {
        let image = self
            .encoded_image(image_id)?
            .ok_or_else(|| Error::Config("describe_and_extract requires an image source".into()))?;
        let body = serde_json::json!({
            "image": image,
            "instruction": self.opts.instruction_prompt,
        });
        let d: Described = self.post("/describe_and_extract", &body)?;
        let tags = canonicalize_tags_lossy(&d.tags);
        Ok((d.description, tags))
    }

    fn encoded_image(&self, image_id: &str) -> Result<Option<String>> {
        match &self.images {
            Some(src) => {
                let bytes = src.image_bytes(image_id)?;
                Ok(Some(
                    base64::engine::general_purpose::STANDARD.encode(bytes),
                ))
            }
            None => Ok(None),
        }
    }

    fn manifest_record(&self, image_id: &str) -> Result<&crate::model::ImageRecord> {
        self.manifest
            .as_ref()
            .and_then(|m| m.record(image_id))
            .ok_or_else(|| Error::MissingRecord(image_id.to_owned()))
    }

    fn with_retries<T>(&self, mut op: impl FnMut() -> Result<T, Failure>) -> Result<T> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(Failure::Retryable(_)) if attempts <= self.opts.retries => {
                    std::thread::sleep(Duration::from_millis(20 * u64::from(attempts)));
                }
                Err(Failure::Retryable(message)) | Err(Failure::Fatal(message)) => {
                    return Err(Error::Transport { attempts, message })
                }
            }
        }
    }

    fn get_once<T: DeserializeOwned>(&self, path: &str) -> Result<T, Failure> {
        let resp = self
            .agent
            .get(&format!("{}{path}", self.base))
            .call()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        read_body(path, resp)
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &serde_json::Value) -> Result<T> {
        let env: BridgeEnvelope<T> = self.with_retries(|| {
            let resp = self
                .agent
                .post(&format!("{}{path}", self.base))
                .send_json(body)
                .map_err(|e| Failure::Retryable(e.to_string()))?;
            read_body(path, resp)
        })?;
        if self.dimension != 0 && env.dimension != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: env.dimension,
            });
        }
        Ok(env.payload)
    }

    fn vector(&self, raw: Vec<f64>) -> Result<EmbeddingVector> {
        let v = EmbeddingVector::new(raw)?;
        v.check_dimension(self.dimension)?;
        Ok(v)
    }

    fn fetch_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let v: Vectors = self.post("/embed_text", &serde_json::json!({ "texts": texts }))?;
        if v.vectors.len() != texts.len() {
            return Err(Error::Transport {
                attempts: 1,
                message: format!(
                    "/embed_text returned {} vectors for {} texts",
                    v.vectors.len(),
                    texts.len()
                ),
            });
        }
        v.vectors.into_iter().map(|raw| self.vector(raw)).collect()
    }
}

fn read_body<T: DeserializeOwned>(
    path: &str,
    mut resp: ureq::http::Response<ureq::Body>,
) -> Result<T, Failure> {
    let status = resp.status().as_u16();
    if status == 429 || status >= 500 {
        return Err(Failure::Retryable(format!("{path}: HTTP {status}")));
    }
    if status >= 400 {
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(Failure::Fatal(format!("{path}: HTTP {status}: {text}")));
    }
    resp.body_mut()
        .read_json()
        .map_err(|e| Failure::Fatal(format!("{path}: malformed response: {e}")))
}

fn canonicalize_tags_lossy(raw: &[String]) -> Vec<String> {
    let kept: Vec<&String> = raw.iter().filter(|t| !t.trim().is_empty()).collect();
    canonicalize_tags(&kept).unwrap_or_default()
}

impl EmbeddingProvider for RemoteProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn anchor_prompt(&self) -> &str {
        &self.anchor
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.embed_texts(&[text.to_owned()])?;
        Ok(out.remove(0))
    }

    /// Batches uncached texts and issues up to `max_in_flight` concurrent
    /// requests; output order follows input order.
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let keys: Vec<String> = texts
            .iter()
            .map(|t| canonicalize_tag(t))
            .collect::<Result<_>>()?;
        let mut missing: Vec<String> = {
            let cache = self.text_cache.lock().expect("cache poisoned");
            keys.iter()
                .filter(|k| !cache.contains_key(*k))
                .cloned()
                .collect()
        };
        missing.sort();
        missing.dedup();

        if !missing.is_empty() {
            let batches: Vec<&[String]> = missing.chunks(self.opts.batch_size.max(1)).collect();
            let mut fetched = Vec::with_capacity(missing.len());
            for wave in batches.chunks(self.opts.max_in_flight.max(1)) {
                let results: Vec<Result<Vec<EmbeddingVector>>> = std::thread::scope(|s| {
                    let handles: Vec<_> = wave
                        .iter()
                        .map(|batch| s.spawn(move || self.fetch_texts(batch)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("bridge worker panicked"))
                        .collect()
                });
                for r in results {
                    fetched.extend(r?);
                }
            }
            let mut cache = self.text_cache.lock().expect("cache poisoned");
            for (k, v) in missing.into_iter().zip(fetched) {
                cache.insert(k, v);
            }
        }

        let cache = self.text_cache.lock().expect("cache poisoned");
        Ok(keys.iter().map(|k| cache[k].clone()).collect())
    }

    fn embed_image(&self, image_id: &str) -> Result<EmbeddingVector> {
        match self.encoded_image(image_id)? {
            Some(image) => {
                let v: Vector =
                    self.post("/embed_image", &serde_json::json!({ "image": image }))?;
                self.vector(v.vector)
            }
            None => Ok(self.manifest_record(image_id)?.embedding.clone()),
        }
    }

    fn detect_tags(&self, image_id: &str) -> Result<Vec<String>> {
        match self.encoded_image(image_id)? {
            Some(image) => {
                let t: Tags = self.post("/tags", &serde_json::json!({ "image": image }))?;
                Ok(canonicalize_tags_lossy(&t.tags))
            }
            None => Ok(self.manifest_record(image_id)?.detected_tags.clone()),
        }
    }
}
