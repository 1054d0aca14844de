//! Shared vocabulary: prompts, images, brands, detected biases, modifiers and
//! run traces. Every type here is an immutable value once constructed.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A user prompt. `core_subject` is filled in by the refiner once the VLM has
/// named the prompt's principal subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PromptRepr")]
pub struct Prompt {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    core_subject: Option<String>,
}

#[derive(Deserialize)]
struct PromptRepr {
    text: String,
    #[serde(default)]
    core_subject: Option<String>,
}

impl TryFrom<PromptRepr> for Prompt {
    type Error = Error;

    fn try_from(r: PromptRepr) -> Result<Self> {
        let mut p = Prompt::new(r.text)?;
        p.core_subject = r.core_subject;
        Ok(p)
    }
}

impl Prompt {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::EmptyInput("prompt text"));
        }
        Ok(Self {
            text,
            core_subject: None,
        })
    }

    pub fn with_core_subject(mut self, subject: impl Into<String>) -> Self {
        self.core_subject = Some(subject.into());
        self
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn core_subject(&self) -> Option<&str> {
        self.core_subject.as_deref()
    }
}

/// Image bytes or a filesystem path. The core never decodes pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImagePayload {
    #[serde(with = "b64")]
    Bytes(Vec<u8>),
    Path(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub payload: ImagePayload,
    pub source_prompt: String,
}

impl ImageRef {
    pub fn from_bytes(
        id: impl Into<String>,
        bytes: Vec<u8>,
        source_prompt: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            payload: ImagePayload::Bytes(bytes),
            source_prompt: source_prompt.into(),
        }
    }

    pub fn from_path(
        id: impl Into<String>,
        path: impl Into<String>,
        source_prompt: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            payload: ImagePayload::Path(path.into()),
            source_prompt: source_prompt.into(),
        }
    }

    /// Fails with `EmptyInput` when there is nothing to send to a provider.
    pub fn ensure_present(&self) -> Result<()> {
        let empty = match &self.payload {
            ImagePayload::Bytes(b) => b.is_empty(),
            ImagePayload::Path(p) => p.is_empty(),
        };
        if empty || self.id.is_empty() {
            return Err(Error::EmptyInput("image payload"));
        }
        Ok(())
    }

    pub fn bytes(&self) -> Option<&[u8]> {
        match &self.payload {
            ImagePayload::Bytes(b) => Some(b),
            ImagePayload::Path(_) => None,
        }
    }
}

/// Brand identity. Equality and ordering look at `canonical_name` only.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "BrandRepr")]
pub struct BrandId {
    canonical_name: String,
    display_name: String,
}

#[derive(Deserialize)]
struct BrandRepr {
    canonical_name: String,
    display_name: String,
}

impl TryFrom<BrandRepr> for BrandId {
    type Error = Error;

    fn try_from(r: BrandRepr) -> Result<Self> {
        BrandId::new(r.canonical_name, r.display_name)
    }
}

pub fn is_slug(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

/// Lowercases and replaces every run of non-alphanumeric ASCII with one `-`.
pub fn slugify(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut dash = false;
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
            dash = false;
        } else if !dash && !out.is_empty() {
            out.push('-');
            dash = true;
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    out
}

impl BrandId {
    pub fn new(canonical_name: impl Into<String>, display_name: impl Into<String>) -> Result<Self> {
        let canonical_name = canonical_name.into();
        if !is_slug(&canonical_name) {
            return Err(Error::invalid(alloc::format!(
                "brand canonical name `{canonical_name}` must match [a-z0-9-]+"
            )));
        }
        Ok(Self {
            canonical_name,
            display_name: display_name.into(),
        })
    }

    /// Builds an id from a free-form label such as `"Coca-Cola"`.
    pub fn from_display(display_name: &str) -> Result<Self> {
        Self::new(slugify(display_name), display_name)
    }

    pub fn canonical_name(&self) -> &str {
        &self.canonical_name
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }
}

impl PartialEq for BrandId {
    fn eq(&self, other: &Self) -> bool {
        self.canonical_name == other.canonical_name
    }
}

impl Eq for BrandId {}

impl PartialOrd for BrandId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for BrandId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical_name.cmp(&other.canonical_name)
    }
}

impl fmt::Display for BrandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasKind {
    Explicit,
    Implicit,
}

impl BiasKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BiasKind::Explicit => "explicit",
            BiasKind::Implicit => "implicit",
        }
    }
}

impl FromStr for BiasKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit" => Ok(BiasKind::Explicit),
            "implicit" => Ok(BiasKind::Implicit),
            other => Err(Error::invalid(alloc::format!("unknown bias kind `{other}`"))),
        }
    }
}

/// Pixel-space box, `(x, y)` top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !x.is_finite() || !y.is_finite() || !w.is_finite() || !h.is_finite() {
            return Err(Error::invalid("bounding box needs finite coordinates and w > 0, h > 0"));
        }
        Ok(Self { x, y, w, h })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Evidence {
    Explicit { bbox: BoundingBox, label: String },
    Implicit { style_id: String, similarity: f64 },
}

/// One detected brand bias: a logo (explicit) or a matched house style (implicit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRecord {
    pub brand: BrandId,
    pub confidence: f64,
    pub evidence: Evidence,
}

fn check_unit(confidence: f64) -> Result<()> {
    if (0.0..=1.0).contains(&confidence) {
        Ok(())
    } else {
        Err(Error::ScoreOutOfRange(confidence))
    }
}

impl BiasRecord {
    pub fn explicit(
        brand: BrandId,
        confidence: f64,
        bbox: BoundingBox,
        label: impl Into<String>,
    ) -> Result<Self> {
        check_unit(confidence)?;
        Ok(Self {
            brand,
            confidence,
            evidence: Evidence::Explicit {
                bbox,
                label: label.into(),
            },
        })
    }

    pub fn implicit(
        brand: BrandId,
        confidence: f64,
        style_id: impl Into<String>,
        similarity: f64,
    ) -> Result<Self> {
        check_unit(confidence)?;
        if !(-1.0..=1.0).contains(&similarity) {
            return Err(Error::invalid("implicit similarity must lie in [-1, 1]"));
        }
        Ok(Self {
            brand,
            confidence,
            evidence: Evidence::Implicit {
                style_id: style_id.into(),
                similarity,
            },
        })
    }

    pub fn kind(&self) -> BiasKind {
        match self.evidence {
            Evidence::Explicit { .. } => BiasKind::Explicit,
            Evidence::Implicit { .. } => BiasKind::Implicit,
        }
    }

    /// `"canonical_name:kind"`, the unit of the canonical key.
    pub fn token(&self) -> String {
        alloc::format!("{}:{}", self.brand.canonical_name(), self.kind().as_str())
    }
}

/// Sorted, `|`-joined `canonical_name:kind` tokens. Order of the input is irrelevant.
pub fn canonical_key<'a, I>(records: I) -> String
where
    I: IntoIterator<Item = &'a BiasRecord>,
{
    let mut tokens: Vec<String> = records.into_iter().map(BiasRecord::token).collect();
    tokens.sort();
    tokens.dedup();
    tokens.join("|")
}

/// The detected bias set of one image, deduplicated on `(brand, kind)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<BiasRecord>", into = "Vec<BiasRecord>")]
pub struct BiasSet {
    records: BTreeMap<(BrandId, BiasKind), BiasRecord>,
}

impl From<Vec<BiasRecord>> for BiasSet {
    fn from(records: Vec<BiasRecord>) -> Self {
        records.into_iter().collect()
    }
}

impl From<BiasSet> for Vec<BiasRecord> {
    fn from(set: BiasSet) -> Self {
        set.records.into_values().collect()
    }
}

impl FromIterator<BiasRecord> for BiasSet {
    fn from_iter<T: IntoIterator<Item = BiasRecord>>(iter: T) -> Self {
        let mut set = BiasSet::new();
        for r in iter {
            set.insert(r);
        }
        set
    }
}

impl BiasSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps the higher-confidence record on a `(brand, kind)` clash; the
    /// earlier one wins ties. Returns true if `record` was stored.
    pub fn insert(&mut self, record: BiasRecord) -> bool {
        let slot = (record.brand.clone(), record.kind());
        match self.records.get(&slot) {
            Some(existing) if existing.confidence >= record.confidence => false,
            _ => {
                self.records.insert(slot, record);
                true
            }
        }
    }

    pub fn extend(&mut self, other: impl IntoIterator<Item = BiasRecord>) {
        for r in other {
            self.insert(r);
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in canonical `(brand, kind)` order.
    pub fn iter(&self) -> impl Iterator<Item = &BiasRecord> {
        self.records.values()
    }

    pub fn key(&self) -> String {
        canonical_key(self.iter())
    }

    pub fn contains(&self, brand: &BrandId, kind: BiasKind) -> bool {
        self.records.contains_key(&(brand.clone(), kind))
    }

    pub fn contains_brand(&self, brand: &BrandId) -> bool {
        self.records.keys().any(|(b, _)| b == brand)
    }

    /// Distinct brands, sorted.
    pub fn brands(&self) -> Vec<BrandId> {
        let mut out: Vec<BrandId> = self.records.keys().map(|(b, _)| b.clone()).collect();
        out.dedup();
        out
    }

    pub fn slots(&self) -> impl Iterator<Item = &(BrandId, BiasKind)> {
        self.records.keys()
    }

    /// True when every `(brand, kind)` slot of `self` is present in `other`.
    pub fn is_subset_of(&self, other: &BiasSet) -> bool {
        self.records.keys().all(|k| other.records.contains_key(k))
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.iter().map(|r| r.confidence).collect()
    }
}

/// A debiasing phrase chosen for one feature of one detected brand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modifier {
    pub text: String,
    pub replaces_feature: String,
    pub source_bias: BrandId,
    /// Selection score; absent when the candidate was taken without scoring.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FreshVlm,
    CacheHit,
}

/// The mediator: ordered set of modifiers inserted between detection and regeneration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediatorSet {
    modifiers: Vec<Modifier>,
    pub provenance: Provenance,
}

impl MediatorSet {
    /// Orders modifiers by `(source_bias, replaces_feature)`; the sort is
    /// stable, so several picks for one feature keep their rank order.
    pub fn new(mut modifiers: Vec<Modifier>, provenance: Provenance) -> Self {
        modifiers.sort_by(|a, b| {
            a.source_bias
                .cmp(&b.source_bias)
                .then_with(|| a.replaces_feature.cmp(&b.replaces_feature))
        });
        Self {
            modifiers,
            provenance,
        }
    }

    pub fn modifiers(&self) -> &[Modifier] {
        &self.modifiers
    }

    pub fn len(&self) -> usize {
        self.modifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modifiers.is_empty()
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Keeps only modifiers whose source brand appears in `biases`.
    pub fn restricted_to(&self, biases: &BiasSet) -> MediatorSet {
        MediatorSet {
            modifiers: self
                .modifiers
                .iter()
                .filter(|m| biases.contains_brand(&m.source_bias))
                .cloned()
                .collect(),
            provenance: self.provenance,
        }
    }

    pub fn texts(&self) -> Vec<&str> {
        self.modifiers.iter().map(|m| m.text.as_str()).collect()
    }
}

/// The prompt after augmentation with the mediator's modifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedPrompt {
    pub base: Prompt,
    pub modifiers: Vec<Modifier>,
    pub rendered_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Baseline,
    NegativePrompt,
    CiderNoScoring,
    CiderFull,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Baseline,
        Condition::NegativePrompt,
        Condition::CiderNoScoring,
        Condition::CiderFull,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::NegativePrompt => "negative-prompt",
            Condition::CiderNoScoring => "cider-no-scoring",
            Condition::CiderFull => "cider-full",
        }
    }

    /// Row label used in Markdown reports.
    pub fn label(self) -> &'static str {
        match self {
            Condition::Baseline => "Baseline",
            Condition::NegativePrompt => "Negative Prompting",
            Condition::CiderNoScoring => "CIDER (w/o Scoring)",
            Condition::CiderFull => "CIDER (Full)",
        }
    }

    pub fn intervenes(self) -> bool {
        matches!(self, Condition::CiderNoScoring | Condition::CiderFull)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(alloc::format!(
                    "unknown condition `{s}` (expected baseline, negative-prompt, cider-no-scoring or cider-full)"
                ))
            })
    }
}

/// Full trace of one pipeline execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub prompt: Prompt,
    pub condition: Condition,
    /// Text actually sent to the generator for the initial image.
    pub generated_text: String,
    pub initial_image: ImageRef,
    pub bias_set: BiasSet,
    pub mediator: Option<MediatorSet>,
    pub refined: Option<RefinedPrompt>,
    pub final_image: ImageRef,
    pub bns_initial: f64,
    pub bns_final: f64,
    /// Refinement VLM calls, retries included.
    pub vlm_calls: u32,
    pub cache_hit: bool,
    pub rounds: u32,
    pub seed: u64,
}

impl RunRecord {
    pub fn summary_line(&self) -> String {
        let mods = self
            .mediator
            .as_ref()
            .map(|m| m.texts().join("; "))
            .unwrap_or_else(|| "-".to_string());
        alloc::format!(
            "[{}] biases: {} | modifiers: {} | BNS {:.4} -> {:.4} | vlm calls: {}{}",
            self.condition,
            if self.bias_set.is_empty() {
                "none".to_string()
            } else {
                self.bias_set.key()
            },
            mods,
            self.bns_initial,
            self.bns_final,
            self.vlm_calls,
            if self.cache_hit { " (cache hit)" } else { "" }
        )
    }
}

mod b64 {
    use alloc::string::String;
    use alloc::vec::Vec;

    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}
