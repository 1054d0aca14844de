//! JSON-over-HTTP clients for the five model services (plus optional quality scoring).
//!
//! Every call is a single `POST` of a JSON body. Transport errors, non-200
//! statuses and replies that do not match the wire shape all surface as
//! `ProviderUnavailable` naming the provider.

use std::collections::BTreeMap;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use cider_core::bench::QualityProvider;
use cider_core::bns::JudgeProvider;
use cider_core::detector::{LogoDetector, RawDetection};
use cider_core::embedding::{stable_hash64, EmbeddingProvider, EmbeddingVector};
use cider_core::model::{BoundingBox, ImagePayload, ImageRef};
use cider_core::pipeline::ImageGenerator;
use cider_core::refiner::{VlmProvider, VlmRequest};
use cider_core::Error;

type CoreResult<T> = cider_core::Result<T>;

const MAX_BODY_BYTES: u64 = 256 * 1024 * 1024;

/// One service URL with its own agent and timeout.
#[derive(Debug, Clone)]
pub struct Endpoint {
    provider: &'static str,
    url: String,
    agent: ureq::Agent,
}

impl Endpoint {
    pub fn new(provider: &'static str, url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            provider,
            url: url.into(),
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::unavailable(self.provider, reason)
    }

    fn post_text<B: Serialize>(&self, body: &B) -> CoreResult<String> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(body)
            .map_err(|e| self.fail(format!("{}: {e}", self.url)))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_string()
            .map_err(|e| self.fail(format!("reading reply: {e}")))?;
        if status != 200 {
            let snippet: String = text.chars().take(200).collect();
            return Err(self.fail(format!("HTTP {status}: {snippet}")));
        }
        Ok(text)
    }

    fn post_json<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> CoreResult<R> {
        let text = self.post_text(body)?;
        serde_json::from_str(&text).map_err(|e| self.fail(format!("unexpected reply shape: {e}")))
    }
}

/// Base64 of the image bytes, reading path payloads from disk.
pub fn image_b64(image: &ImageRef) -> CoreResult<String> {
    image.ensure_present()?;
    match &image.payload {
        ImagePayload::Bytes(b) => Ok(STANDARD.encode(b)),
        ImagePayload::Path(p) => std::fs::read(p)
            .map(|b| STANDARD.encode(b))
            .map_err(|e| Error::invalid(format!("cannot read image {p}: {e}"))),
    }
}

pub struct RemoteEmbedder {
    endpoint: Endpoint,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(endpoint: Endpoint, dim: usize) -> Self {
        Self { endpoint, dim }
    }

    fn embed(&self, kind: &str, payload: String) -> CoreResult<EmbeddingVector> {
        #[derive(Deserialize)]
        struct Reply {
            embedding: Vec<f64>,
            dim: usize,
        }
        let r: Reply = self
            .endpoint
            .post_json(&json!({"kind": kind, "payload": payload}))?;
        if r.dim != r.embedding.len() {
            return Err(self
                .endpoint
                .fail(format!("reply claims dim {} but carries {} values", r.dim, r.embedding.len())));
        }
        let v = EmbeddingVector::new(r.embedding)?;
        v.check_dim(self.dim)?;
        Ok(v)
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> CoreResult<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::EmptyInput("text"));
        }
        self.embed("text", text.to_string())
    }

    fn embed_image(&self, image: &ImageRef) -> CoreResult<EmbeddingVector> {
        self.embed("image", image_b64(image)?)
    }
}

pub struct RemoteLogoDetector {
    endpoint: Endpoint,
}

impl RemoteLogoDetector {
    pub fn new(endpoint: Endpoint) -> Self {
        Self { endpoint }
    }
}

impl LogoDetector for RemoteLogoDetector {
    fn detect(&self, image: &ImageRef) -> CoreResult<Vec<RawDetection>> {
        #[derive(Deserialize)]
        struct Det {
            label: String,
            confidence: f64,
            #[serde(rename = "box")]
            bbox: [f64; 4],
        }
        #[derive(Deserialize)]
        struct Reply {
            detections: Vec<Det>,
        }
        let r: Reply = self
            .endpoint
            .post_json(&json!({"image_b64": image_b64(image)?}))?;
        r.detections
            .into_iter()
            .map(|d| {
                let [x, y, w, h] = d.bbox;
                let bbox = BoundingBox::new(x, y, w, h)
                    .map_err(|e| self.endpoint.fail(format!("detection `{}`: {e}", d.label)))?;
                Ok(RawDetection {
                    label: d.label,
                    confidence: d.confidence,
                    bbox,
                })
            })
            .collect()
    }
}

pub struct RemoteVlm {
    endpoint: Endpoint,
}

impl RemoteVlm {
    pub fn new(endpoint: Endpoint) -> Self {
        Self { endpoint }
    }
}

impl VlmProvider for RemoteVlm {
    fn complete(&self, request: &VlmRequest) -> CoreResult<String> {
        let mut body = json!({
            "system": request.system,
            "image_b64": image_b64(&request.image)?,
            "biases": request.biases,
            "prompt": request.prompt,
        });
        if let Some(feedback) = &request.retry_feedback {
            body["retry_feedback"] = json!(feedback);
        }
        self.endpoint.post_text(&body)
    }
}

pub struct RemoteJudge {
    endpoint: Endpoint,
}

impl RemoteJudge {
    pub fn new(endpoint: Endpoint) -> Self {
        Self { endpoint }
    }
}

impl JudgeProvider for RemoteJudge {
    fn judge(&self, image: &ImageRef) -> CoreResult<String> {
        self.endpoint
            .post_text(&json!({"image_b64": image_b64(image)?}))
    }
}

pub struct RemoteGenerator {
    endpoint: Endpoint,
}

impl RemoteGenerator {
    pub fn new(endpoint: Endpoint) -> Self {
        Self { endpoint }
    }
}

impl ImageGenerator for RemoteGenerator {
    fn generate(&self, prompt: &str, seed: u64) -> CoreResult<ImageRef> {
        #[derive(Deserialize)]
        struct Reply {
            image_b64: String,
            #[serde(default)]
            id: Option<String>,
        }
        let r: Reply = self
            .endpoint
            .post_json(&json!({"prompt": prompt, "seed": seed, "negative": null}))?;
        let bytes = STANDARD
            .decode(r.image_b64.trim())
            .map_err(|e| self.endpoint.fail(format!("image_b64 is not base64: {e}")))?;
        if bytes.is_empty() {
            return Err(self.endpoint.fail("empty image"));
        }
        let id = r
            .id
            .filter(|id| !id.is_empty())
            .unwrap_or_else(|| format!("img-{:016x}", stable_hash64(&[prompt.as_bytes(), &seed.to_le_bytes()])));
        Ok(ImageRef::from_bytes(id, bytes, prompt))
    }
}

/// Quality scorer: `{"image_b64","prompt"}` -> `{"scores":{name: value}}`.
pub struct RemoteQuality {
    endpoint: Endpoint,
}

impl RemoteQuality {
    pub fn new(endpoint: Endpoint) -> Self {
        Self { endpoint }
    }
}

impl QualityProvider for RemoteQuality {
    fn score(&self, image: &ImageRef, prompt: &str) -> CoreResult<BTreeMap<String, f64>> {
        #[derive(Deserialize)]
        struct Reply {
            scores: BTreeMap<String, f64>,
        }
        let r: Reply = self
            .endpoint
            .post_json(&json!({"image_b64": image_b64(image)?, "prompt": prompt}))?;
        Ok(r.scores)
    }
}
