//! Brand aesthetics database: one normalized centroid embedding per brand
//! house style, matched by cosine similarity against generated images.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::model::{is_slug, BrandId, ImageRef};

/// Default cosine threshold for an implicit style match.
pub const DEFAULT_IMPLICIT_THRESHOLD: f64 = 0.65;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEntry {
    pub style_id: String,
    pub brand: BrandId,
    pub description: String,
    pub centroid: EmbeddingVector,
    pub exemplar_count: u32,
}

impl StyleEntry {
    pub fn validate(&self) -> Result<()> {
        if !is_slug(&self.style_id) {
            return Err(Error::invalid(alloc::format!(
                "style id `{}` must match [a-z0-9-]+",
                self.style_id
            )));
        }
        if self.exemplar_count == 0 {
            return Err(Error::EmptyExemplars);
        }
        if (self.centroid.norm() - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::invalid(alloc::format!(
                "centroid of `{}` is not unit norm",
                self.style_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleMatch<'a> {
    pub entry: &'a StyleEntry,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AestheticsDatabase {
    entries: BTreeMap<String, StyleEntry>,
    embedding_dim: usize,
    threshold: f64,
}

impl AestheticsDatabase {
    pub fn new(embedding_dim: usize) -> Self {
        Self {
            entries: BTreeMap::new(),
            embedding_dim,
            threshold: DEFAULT_IMPLICIT_THRESHOLD,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        self.threshold = threshold;
        Ok(self)
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// Database-level default used when a caller does not override it.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by style id.
    pub fn entries(&self) -> impl Iterator<Item = &StyleEntry> {
        self.entries.values()
    }

    pub fn get(&self, style_id: &str) -> Option<&StyleEntry> {
        self.entries.get(style_id)
    }

    /// Adds or replaces an already-computed entry (used when loading from disk).
    pub fn insert_entry(&mut self, entry: StyleEntry) -> Result<()> {
        entry.validate()?;
        entry.centroid.check_dim(self.embedding_dim)?;
        self.entries.insert(entry.style_id.clone(), entry);
        Ok(())
    }

    pub fn remove(&mut self, style_id: &str) -> Option<StyleEntry> {
        self.entries.remove(style_id)
    }

    /// Embeds every exemplar and stores the renormalized mean as the style centroid.
    pub fn ingest_style(
        &mut self,
        embedder: &dyn EmbeddingProvider,
        brand: BrandId,
        style_id: &str,
        description: &str,
        exemplars: &[ImageRef],
    ) -> Result<&StyleEntry> {
        if exemplars.is_empty() {
            return Err(Error::EmptyExemplars);
        }
        let embeddings = exemplars
            .iter()
            .map(|img| embedder.embed_image(img))
            .collect::<Result<Vec<_>>>()?;
        let centroid = EmbeddingVector::mean(&embeddings)?.normalized()?;
        let entry = StyleEntry {
            style_id: style_id.into(),
            brand,
            description: description.into(),
            centroid,
            exemplar_count: u32::try_from(exemplars.len())
                .map_err(|_| Error::invalid("too many exemplars"))?,
        };
        self.insert_entry(entry)?;
        Ok(&self.entries[style_id])
    }

    /// All styles with `cosine >= threshold`, most similar first, ties by style id.
    pub fn match_embedding(
        &self,
        image_embedding: &EmbeddingVector,
        threshold: f64,
    ) -> Result<Vec<StyleMatch<'_>>> {
        check_threshold(threshold)?;
        image_embedding.check_dim(self.embedding_dim)?;
        let mut out = Vec::new();
        for entry in self.entries.values() {
            let similarity = cosine(image_embedding, &entry.centroid)?;
            if similarity >= threshold {
                out.push(StyleMatch { entry, similarity });
            }
        }
        out.sort_by(|a, b| {
            b.similarity
                .partial_cmp(&a.similarity)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.entry.style_id.cmp(&b.entry.style_id))
        });
        Ok(out)
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(Error::invalid("match threshold must lie in [-1, 1]"))
    }
}
