//! Embedding vectors, cosine similarity and the embedding-provider contract.

use alloc::string::String;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ImageRef;

/// Default dimensionality of the deterministic mock embedder.
pub const DEFAULT_MOCK_DIM: usize = 64;

/// A dense real vector with `dim >= 2` finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("embedding dimension must be at least 2"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        other.check_dim(self.dim())?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.norm_squared())
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        self.scaled(1.0 / n)
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.dim(),
            });
        }
        Ok(())
    }

    /// Arithmetic mean of equally sized vectors.
    pub fn mean(vectors: &[EmbeddingVector]) -> Result<Self> {
        let first = vectors.first().ok_or(Error::EmptyInput("vectors"))?;
        let mut acc = alloc::vec![0.0; first.dim()];
        for v in vectors {
            v.check_dim(first.dim())?;
            for (a, x) in acc.iter_mut().zip(&v.values) {
                *a += x;
            }
        }
        let n = vectors.len() as f64;
        Self::new(acc.into_iter().map(|a| a / n).collect())
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    let dot = a.dot(b)?;
    let na = a.norm_squared();
    let nb = b.norm_squared();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / libm::sqrt(na * nb)).clamp(-1.0, 1.0))
}

/// Text and image embedding service (CLIP-like). Implementations must be reentrant.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector>;

    fn embed_image(&self, image: &ImageRef) -> Result<EmbeddingVector>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProviderKind {
    Remote,
    DeterministicMock,
}

/// Configuration for constructing an embedding provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProviderSpec {
    pub kind: EmbeddingProviderKind,
    pub endpoint: Option<String>,
    pub dim: usize,
    pub timeout_ms: u64,
    #[serde(default)]
    pub seed: u64,
}

impl EmbeddingProviderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::invalid("embedding dim must be at least 2"));
        }
        if self.timeout_ms == 0 {
            return Err(Error::invalid("embedding timeout must be positive"));
        }
        if self.kind == EmbeddingProviderKind::Remote
            && self.endpoint.as_deref().is_none_or(str::is_empty)
        {
            return Err(Error::invalid("remote embedding provider requires an endpoint"));
        }
        Ok(())
    }
}

/// Stable 64-bit FNV-1a over length-prefixed parts, so `["ab","c"]` and
/// `["a","bc"]` hash differently.
pub fn stable_hash64(parts: &[&[u8]]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(&(p.len() as u64).to_le_bytes());
        h.write(p);
    }
    h.finish()
}

/// Unit vector of `dim` standard normals drawn from a ChaCha stream seeded by `key`.
pub fn gaussian_unit_vector(key: u64, dim: usize) -> Result<EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let values: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    EmbeddingVector::new(values)?.normalized()
}

/// Deterministic embedder: a pure function of the input and the configured seed.
/// Unrelated inputs land near-orthogonal at moderate dimension.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_MOCK_DIM, 0)
    }
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn draw(&self, parts: &[&[u8]]) -> Result<EmbeddingVector> {
        let seed = self.seed.to_le_bytes();
        let mut all: Vec<&[u8]> = Vec::with_capacity(parts.len() + 1);
        all.push(&seed);
        all.extend_from_slice(parts);
        gaussian_unit_vector(stable_hash64(&all), self.dim)
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::EmptyInput("text"));
        }
        self.draw(&[b"text", text.as_bytes()])
    }

    fn embed_image(&self, image: &ImageRef) -> Result<EmbeddingVector> {
        image.ensure_present()?;
        match image.bytes() {
            Some(bytes) => self.draw(&[b"image", image.id.as_bytes(), bytes]),
            None => self.draw(&[b"image", image.id.as_bytes()]),
        }
    }
}
