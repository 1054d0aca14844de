//! Bias detection: logos through a detection provider (explicit) and house
//! styles through the aesthetics database (implicit), unioned per image.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::aesthetics::AestheticsDatabase;
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::model::{slugify, BiasRecord, BiasSet, BoundingBox, BrandId, ImageRef};

/// A detection as reported by the logo provider, before label mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub label: String,
    pub confidence: f64,
    pub bbox: BoundingBox,
}

/// A detection whose label resolved to a known brand.
#[derive(Debug, Clone, PartialEq)]
pub struct LogoDetection {
    pub label: String,
    pub brand: BrandId,
    pub confidence: f64,
    pub bbox: BoundingBox,
}

pub trait LogoDetector: Send + Sync {
    fn detect(&self, image: &ImageRef) -> Result<Vec<RawDetection>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Minimum logo confidence kept by the explicit detector.
    pub explicit_threshold: f64,
    /// Implicit match threshold; `None` falls back to the database default.
    pub implicit_threshold: Option<f64>,
    /// Detector label -> brand. Keys are compared after slugification.
    pub label_to_brand: BTreeMap<String, BrandId>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            explicit_threshold: 0.5,
            implicit_threshold: None,
            label_to_brand: BTreeMap::new(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.explicit_threshold) {
            return Err(Error::invalid("explicit threshold must lie in [0, 1]"));
        }
        if let Some(t) = self.implicit_threshold {
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::invalid("implicit threshold must lie in [-1, 1]"));
            }
        }
        Ok(())
    }

    pub fn with_brands<I: IntoIterator<Item = BrandId>>(mut self, brands: I) -> Self {
        for b in brands {
            self.label_to_brand.insert(b.canonical_name().into(), b);
        }
        self
    }

    fn resolve(&self, label: &str) -> Option<&BrandId> {
        self.label_to_brand
            .get(label)
            .or_else(|| self.label_to_brand.get(slugify(label).as_str()))
    }
}

pub struct BiasDetector<'a> {
    config: DetectorConfig,
    logos: &'a dyn LogoDetector,
    embedder: &'a dyn EmbeddingProvider,
}

impl<'a> BiasDetector<'a> {
    pub fn new(
        config: DetectorConfig,
        logos: &'a dyn LogoDetector,
        embedder: &'a dyn EmbeddingProvider,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            logos,
            embedder,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// High-confidence logos mapped to brands. Unknown labels are dropped.
    pub fn logo_detections(&self, image: &ImageRef) -> Result<Vec<LogoDetection>> {
        image.ensure_present()?;
        let raw = self.logos.detect(image)?;
        let mut out = Vec::with_capacity(raw.len());
        for d in raw {
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(Error::unavailable(
                    "detector",
                    alloc::format!("confidence {} outside [0, 1]", d.confidence),
                ));
            }
            if d.confidence < self.config.explicit_threshold {
                continue;
            }
            match self.config.resolve(&d.label) {
                Some(brand) => out.push(LogoDetection {
                    brand: brand.clone(),
                    label: d.label,
                    confidence: d.confidence,
                    bbox: d.bbox,
                }),
                None => log::warn!("dropping detection with unknown label `{}`", d.label),
            }
        }
        Ok(out)
    }

    pub fn detect_explicit(&self, image: &ImageRef) -> Result<BiasSet> {
        let mut set = BiasSet::new();
        for d in self.logo_detections(image)? {
            set.insert(BiasRecord::explicit(d.brand, d.confidence, d.bbox, d.label)?);
        }
        Ok(set)
    }

    /// Style matches above the implicit threshold; confidence is the cosine clamped to [0, 1].
    pub fn detect_implicit(&self, image: &ImageRef, db: &AestheticsDatabase) -> Result<BiasSet> {
        image.ensure_present()?;
        if self.embedder.dim() != db.embedding_dim() {
            return Err(Error::DimensionMismatch {
                expected: db.embedding_dim(),
                actual: self.embedder.dim(),
            });
        }
        if db.is_empty() {
            return Ok(BiasSet::new());
        }
        let threshold = self.config.implicit_threshold.unwrap_or(db.threshold());
        let embedding = self.embedder.embed_image(image)?;
        let mut set = BiasSet::new();
        for m in db.match_embedding(&embedding, threshold)? {
            set.insert(BiasRecord::implicit(
                m.entry.brand.clone(),
                m.similarity.clamp(0.0, 1.0),
                m.entry.style_id.clone(),
                m.similarity,
            )?);
        }
        Ok(set)
    }

    /// Union of explicit and implicit findings. Empty means no intervention is needed.
    pub fn detect_all(&self, image: &ImageRef, db: &AestheticsDatabase) -> Result<BiasSet> {
        let mut set = self.detect_explicit(image)?;
        set.extend(self.detect_implicit(image, db)?.iter().cloned());
        Ok(set)
    }
}
