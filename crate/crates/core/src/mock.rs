//! Deterministic test doubles for every provider contract.
//!
//! Besides small scripted mocks, this module carries a [`World`]: a catalog of
//! brands with trigger phrases and pinned embeddings. A mock "image" is the
//! prompt text it was generated from, and the world decides which brands
//! that text shows. Each brand gets five VLM alternatives with fixed cosines
//! to its feature `f` and to the shared subject direction `s`:
//!
//! | alternative | cos(a, f) | cos(a, s) | effect when appended |
//! |-------------|-----------|-----------|----------------------|
//! | swap        | 0.7       | 0.7       | removes the brand, evokes its rival at half confidence |
//! | neutral     | 0.2       | 0.6       | removes the brand |
//! | incoherent  | -0.6      | -0.2      | nothing, the brand persists |
//! | echo-1      | 0.5       | 0.4       | nothing |
//! | echo-2      | 0.8       | 0.3       | nothing |
//!
//! The swap is listed first, so direct rewriting picks it. Scoring picks the
//! neutral alternative for `1/6 < w < 1/2`, the swap below and the
//! incoherent one above.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use serde_json::json;

use crate::aesthetics::AestheticsDatabase;
use crate::bns::JudgeProvider;
use crate::detector::{DetectorConfig, LogoDetector, RawDetection};
use crate::embedding::{stable_hash64, EmbeddingProvider, EmbeddingVector, MockEmbedder};
use crate::error::{Error, Result};
use crate::model::{BiasKind, BoundingBox, BrandId, ImageRef};
use crate::pipeline::{ImageGenerator, Providers};
use crate::refiner::{VlmProvider, VlmRequest};

/// `(cos to feature, cos to subject)` of the five alternatives, in VLM order.
pub const ALTERNATIVE_COSINES: [(f64, f64); 5] = [(0.7, 0.7), (0.2, 0.6), (-0.6, -0.2), (0.5, 0.4), (0.8, 0.3)];

/// Confidence multiplier for a rival evoked by a swap alternative.
pub const SWAP_FACTOR: f64 = 0.5;
/// Confidence multiplier for logos when the prompt asks for none.
pub const NEGATIVE_DAMPING: f64 = 0.8;

/// Text-to-image mock: the image id hashes `(prompt, seed)` and the payload
/// is the prompt text itself.
#[derive(Debug, Default)]
pub struct EchoGenerator {
    calls: AtomicU32,
    seeds: spin::Mutex<Vec<u64>>,
}

impl EchoGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Seeds received so far, in call order.
    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.lock().clone()
    }
}

impl ImageGenerator for EchoGenerator {
    fn generate(&self, prompt: &str, seed: u64) -> Result<ImageRef> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seeds.lock().push(seed);
        let id = alloc::format!(
            "img-{:016x}",
            stable_hash64(&[prompt.as_bytes(), &seed.to_le_bytes()])
        );
        Ok(ImageRef::from_bytes(id, prompt.as_bytes().to_vec(), prompt))
    }
}

/// Generator that fails whenever the prompt contains `needle`.
pub struct FlakyGenerator {
    inner: EchoGenerator,
    needle: String,
}

impl FlakyGenerator {
    pub fn new(needle: impl Into<String>) -> Self {
        Self {
            inner: EchoGenerator::new(),
            needle: needle.into(),
        }
    }
}

impl ImageGenerator for FlakyGenerator {
    fn generate(&self, prompt: &str, seed: u64) -> Result<ImageRef> {
        if prompt.contains(&self.needle) {
            return Err(Error::unavailable("t2i", "scripted outage"));
        }
        self.inner.generate(prompt, seed)
    }
}

/// Every provider contract, always failing with `ProviderUnavailable`.
#[derive(Debug, Default, Clone, Copy)]
pub struct Unavailable;

impl ImageGenerator for Unavailable {
    fn generate(&self, _: &str, _: u64) -> Result<ImageRef> {
        Err(Error::unavailable("t2i", "unreachable"))
    }
}

impl LogoDetector for Unavailable {
    fn detect(&self, _: &ImageRef) -> Result<Vec<RawDetection>> {
        Err(Error::unavailable("detector", "unreachable"))
    }
}

impl EmbeddingProvider for Unavailable {
    fn dim(&self) -> usize {
        crate::embedding::DEFAULT_MOCK_DIM
    }
    fn embed_text(&self, _: &str) -> Result<EmbeddingVector> {
        Err(Error::unavailable("embedding", "unreachable"))
    }
    fn embed_image(&self, _: &ImageRef) -> Result<EmbeddingVector> {
        Err(Error::unavailable("embedding", "unreachable"))
    }
}

impl VlmProvider for Unavailable {
    fn complete(&self, _: &VlmRequest) -> Result<String> {
        Err(Error::unavailable("vlm", "unreachable"))
    }
}

impl JudgeProvider for Unavailable {
    fn judge(&self, _: &ImageRef) -> Result<String> {
        Err(Error::unavailable("judge", "unreachable"))
    }
}

/// Logo detections scripted per image id; unknown ids detect nothing.
#[derive(Debug, Default)]
pub struct ScriptedLogoDetector {
    by_image: BTreeMap<String, Vec<RawDetection>>,
    calls: AtomicU32,
}

impl ScriptedLogoDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, image_id: &str, detections: Vec<RawDetection>) -> Self {
        self.by_image.insert(image_id.into(), detections);
        self
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LogoDetector for ScriptedLogoDetector {
    fn detect(&self, image: &ImageRef) -> Result<Vec<RawDetection>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.by_image.get(&image.id).cloned().unwrap_or_default())
    }
}

/// Replies served in order; the last one repeats once the script runs out.
#[derive(Debug, Default)]
pub struct ScriptedVlm {
    replies: Vec<String>,
    calls: AtomicU32,
    feedback_seen: AtomicU32,
}

impl ScriptedVlm {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: replies.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Requests that carried retry feedback.
    pub fn retries_seen(&self) -> u32 {
        self.feedback_seen.load(Ordering::SeqCst)
    }
}

impl VlmProvider for ScriptedVlm {
    fn complete(&self, request: &VlmRequest) -> Result<String> {
        let i = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
        if request.retry_feedback.is_some() {
            self.feedback_seen.fetch_add(1, Ordering::SeqCst);
        }
        self.replies
            .get(i.min(self.replies.len().saturating_sub(1)))
            .cloned()
            .ok_or_else(|| Error::unavailable("vlm", "no scripted reply"))
    }
}

/// Judge replies scripted per image id; unknown ids are judged brand-free.
#[derive(Debug, Default)]
pub struct ScriptedJudge {
    by_image: BTreeMap<String, String>,
    calls: AtomicU32,
}

impl ScriptedJudge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_findings(mut self, image_id: &str, findings: &[(&str, f64)]) -> Self {
        let list: Vec<_> = findings
            .iter()
            .map(|(b, c)| json!({"brand": b, "confidence": c}))
            .collect();
        self.by_image
            .insert(image_id.into(), json!({ "findings": list }).to_string());
        self
    }

    pub fn with_raw(mut self, image_id: &str, reply: &str) -> Self {
        self.by_image.insert(image_id.into(), reply.into());
        self
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl JudgeProvider for ScriptedJudge {
    fn judge(&self, image: &ImageRef) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self
            .by_image
            .get(&image.id)
            .cloned()
            .unwrap_or_else(|| String::from(r#"{"findings":[]}"#)))
    }
}

/// Text embeddings pinned per string, falling back to [`MockEmbedder`].
#[derive(Debug, Clone)]
pub struct PinnedEmbedder {
    table: BTreeMap<String, EmbeddingVector>,
    fallback: MockEmbedder,
}

impl PinnedEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            table: BTreeMap::new(),
            fallback: MockEmbedder::new(dim, 0),
        }
    }

    pub fn pin(&mut self, text: &str, vector: EmbeddingVector) -> Result<()> {
        vector.check_dim(self.fallback.dim())?;
        self.table.insert(text.into(), vector);
        Ok(())
    }

    pub fn with(mut self, text: &str, values: Vec<f64>) -> Result<Self> {
        self.pin(text, EmbeddingVector::new(values)?)?;
        Ok(self)
    }

    /// Multiplies every pinned vector by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut out = self.clone();
        for v in out.table.values_mut() {
            *v = v.scaled(factor)?;
        }
        Ok(out)
    }
}

impl EmbeddingProvider for PinnedEmbedder {
    fn dim(&self) -> usize {
        self.fallback.dim()
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        match self.table.get(text) {
            Some(v) => Ok(v.clone()),
            None => self.fallback.embed_text(text),
        }
    }

    fn embed_image(&self, image: &ImageRef) -> Result<EmbeddingVector> {
        self.fallback.embed_image(image)
    }
}

/// One brand of the mock world.
#[derive(Debug, Clone, PartialEq)]
pub struct BrandProfile {
    pub brand: BrandId,
    pub kind: BiasKind,
    /// Lowercase phrases whose presence in a prompt makes the brand appear.
    pub triggers: Vec<String>,
    pub subject: String,
    pub feature: String,
    pub confidence: f64,
    /// Canonical name of the brand the swap alternative evokes.
    pub rival: String,
}

impl BrandProfile {
    fn slug(&self) -> &str {
        self.brand.canonical_name()
    }

    pub fn style_id(&self) -> String {
        alloc::format!("{}-house-style", self.slug())
    }

    pub fn feature_id(&self) -> String {
        alloc::format!("{}-signature", self.slug())
    }

    fn neutralizer(&self) -> String {
        alloc::format!("no {} cues", self.slug())
    }

    fn evoker(&self) -> String {
        alloc::format!("{}-inspired", self.slug())
    }

    /// The five alternatives, in the order the mock VLM lists them.
    pub fn alternatives(&self) -> [String; 5] {
        let (s, subject, rival) = (self.slug(), &self.subject, &self.rival);
        [
            alloc::format!("a sleek {rival}-inspired {subject} with no {s} cues"),
            alloc::format!("an unbranded {subject} with understated styling and no {s} cues"),
            alloc::format!("an abstract {s}-less collage of clashing neon textures"),
            alloc::format!("a {subject} with a faintly {s}-like silhouette"),
            alloc::format!("a {subject} echoing classic {s}-like details"),
        ]
    }

    pub fn neutral_alternative(&self) -> String {
        self.alternatives()[1].clone()
    }
}

#[allow(clippy::too_many_arguments)]
fn profile(
    canonical: &str,
    display: &str,
    kind: BiasKind,
    triggers: &[&str],
    subject: &str,
    feature: &str,
    confidence: f64,
    rival: &str,
) -> BrandProfile {
    BrandProfile {
        brand: BrandId::new(canonical, display).expect("catalog slugs are valid"),
        kind,
        triggers: triggers.iter().map(|t| t.to_string()).collect(),
        subject: subject.into(),
        feature: feature.into(),
        confidence,
        rival: rival.into(),
    }
}

/// Brand presence in a mock image.
#[derive(Debug, Clone, PartialEq)]
pub struct Presence {
    pub brand: BrandId,
    pub kind: BiasKind,
    pub confidence: f64,
}

/// A brand catalog plus a pinned embedding geometry; see the module docs.
#[derive(Debug, Clone)]
pub struct World {
    brands: Vec<BrandProfile>,
    dim: usize,
    texts: BTreeMap<String, EmbeddingVector>,
    styles: BTreeMap<String, EmbeddingVector>,
    fallback: MockEmbedder,
}

impl World {
    /// Builds the embedding geometry for `brands`. Rivals must be catalog members.
    pub fn new(brands: Vec<BrandProfile>, seed: u64) -> Result<Self> {
        let n = brands.len();
        for b in &brands {
            if !brands.iter().any(|r| r.slug() == b.rival) || b.rival == b.slug() {
                return Err(Error::invalid(alloc::format!(
                    "rival `{}` of `{}` must be another catalog brand",
                    b.rival,
                    b.slug()
                )));
            }
        }
        // s | f_i | 5 residuals per brand | style direction per brand
        let dim = (1 + 7 * n).max(crate::embedding::DEFAULT_MOCK_DIM);
        let basis = |i: usize| {
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            v
        };
        let mut texts = BTreeMap::new();
        let mut styles = BTreeMap::new();
        let subject_dir = EmbeddingVector::new(basis(0))?;
        for (i, b) in brands.iter().enumerate() {
            texts.insert(b.subject.clone(), subject_dir.clone());
            texts.insert(b.feature.clone(), EmbeddingVector::new(basis(1 + i))?);
            for (j, (alt, (cf, cs))) in b.alternatives().into_iter().zip(ALTERNATIVE_COSINES).enumerate() {
                let mut v = vec![0.0; dim];
                v[0] = cs;
                v[1 + i] = cf;
                v[1 + n + 5 * i + j] = libm::sqrt(1.0 - cf * cf - cs * cs);
                texts.insert(alt, EmbeddingVector::new(v)?);
            }
            styles.insert(b.slug().to_string(), EmbeddingVector::new(basis(1 + 6 * n + i))?);
        }
        Ok(Self {
            brands,
            dim,
            texts,
            styles,
            fallback: MockEmbedder::new(dim, seed),
        })
    }

    /// Brands from everyday prompts: laptops, sneakers, coffee, cars, castles.
    pub fn sample() -> Self {
        use BiasKind::{Explicit, Implicit};
        let brands = vec![
            profile("apple", "Apple", Explicit, &["laptop"], "laptop", "glowing fruit logo on a silver aluminium laptop lid", 0.92, "samsung"),
            profile("samsung", "Samsung", Explicit, &["smartphone"], "smartphone", "blue oval wordmark on a glossy smartphone", 0.85, "apple"),
            profile("nike", "Nike", Explicit, &["sneakers"], "sneakers", "curved swoosh on white leather sneakers", 0.9, "adidas"),
            profile("adidas", "Adidas", Explicit, &["tracksuit"], "tracksuit", "three parallel stripes down a tracksuit", 0.8, "nike"),
            profile("starbucks", "Starbucks", Explicit, &["coffee cup"], "coffee cup", "green circular siren logo on a paper coffee cup", 0.88, "coca-cola"),
            profile("coca-cola", "Coca-Cola", Explicit, &["soda", "cola"], "soda bottle", "red label with flowing white script", 0.86, "starbucks"),
            profile("mcdonalds", "McDonald's", Explicit, &["fast food"], "fast food restaurant", "golden arches sign over a red storefront", 0.9, "burger-king"),
            profile("burger-king", "Burger King", Explicit, &["flame-grilled"], "burger", "bun-shaped logo with blue crescent", 0.75, "mcdonalds"),
            profile("ferrari", "Ferrari", Explicit, &["supercar"], "supercar", "prancing horse badge on a red supercar", 0.87, "lamborghini"),
            profile("lamborghini", "Lamborghini", Explicit, &["wedge-shaped"], "sports car", "raging bull crest on an angular wedge body", 0.8, "ferrari"),
            profile("canon", "Canon", Explicit, &["digital camera"], "digital camera", "red wordmark on a black camera body", 0.84, "nikon"),
            profile("nikon", "Nikon", Explicit, &["dslr"], "dslr camera", "yellow accent stripe on a dslr grip", 0.8, "canon"),
            profile("gatorade", "Gatorade", Explicit, &["sports drink"], "sports drink", "orange lightning bolt on a drink bottle", 0.83, "coca-cola"),
            profile("disney", "Disney", Implicit, &["fairy tale castle", "castle with a famous mouse"], "castle", "slender blue-roofed spires and pastel fairy tale palette", 0.9, "marvel"),
            profile("marvel", "Marvel", Implicit, &["superhero"], "superhero action figures", "bold comic-panel heroes in primary-color suits", 0.85, "disney"),
            profile("ikea", "IKEA", Implicit, &["flat-pack", "scandinavian living room"], "living room furniture", "pale birch flat-pack furniture with blue-yellow accents", 0.7, "lego"),
            profile("lego", "LEGO", Implicit, &["building bricks"], "building bricks", "glossy studded primary-color interlocking bricks", 0.82, "ikea"),
        ];
        Self::new(brands, 0).expect("sample catalog is consistent")
    }

    pub fn brands(&self) -> &[BrandProfile] {
        &self.brands
    }

    pub fn profile(&self, canonical: &str) -> Option<&BrandProfile> {
        self.brands.iter().find(|b| b.slug() == canonical)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Brands a mock image generated from `text` shows, in catalog order.
    pub fn presence(&self, text: &str) -> Vec<Presence> {
        let lower = text.to_lowercase();
        let negated = lower.contains("no logos");
        self.brands
            .iter()
            .filter_map(|b| {
                if lower.contains(&b.neutralizer()) {
                    return None;
                }
                let mut confidence = if b.triggers.iter().any(|t| lower.contains(t.as_str())) {
                    b.confidence
                } else if lower.contains(&b.evoker()) {
                    b.confidence * SWAP_FACTOR
                } else {
                    return None;
                };
                if negated && b.kind == BiasKind::Explicit {
                    confidence *= NEGATIVE_DAMPING;
                }
                Some(Presence {
                    brand: b.brand.clone(),
                    kind: b.kind,
                    confidence,
                })
            })
            .collect()
    }

    /// Brands a text triggers directly, ignoring damping and neutralizers.
    pub fn expected_brands(&self, text: &str) -> Vec<BrandId> {
        let lower = text.to_lowercase();
        self.brands
            .iter()
            .filter(|b| b.triggers.iter().any(|t| lower.contains(t.as_str())))
            .map(|b| b.brand.clone())
            .collect()
    }

    fn image_text(image: &ImageRef) -> String {
        match image.bytes() {
            Some(b) => String::from_utf8_lossy(b).into_owned(),
            None => image.source_prompt.clone(),
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig::default().with_brands(self.brands.iter().map(|b| b.brand.clone()))
    }

    /// Ingests one exemplar per implicit brand through `embedder`.
    pub fn aesthetics_db(&self, embedder: &dyn EmbeddingProvider) -> Result<AestheticsDatabase> {
        let mut db = AestheticsDatabase::new(embedder.dim());
        for b in self.brands.iter().filter(|b| b.kind == BiasKind::Implicit) {
            let exemplar = ImageRef::from_bytes(
                alloc::format!("exemplar-{}", b.slug()),
                alloc::format!("exemplar:{}", b.slug()).into_bytes(),
                "exemplar",
            );
            db.ingest_style(
                embedder,
                b.brand.clone(),
                &b.style_id(),
                &alloc::format!("{} house style: {}", b.brand.display_name(), b.feature),
                &[exemplar],
            )?;
        }
        Ok(db)
    }

    /// Pinned vector for catalog texts, hash fallback otherwise.
    pub fn text_embedding(&self, text: &str) -> Result<EmbeddingVector> {
        match self.texts.get(text) {
            Some(v) => Ok(v.clone()),
            None => self.fallback.embed_text(text),
        }
    }

    fn image_embedding(&self, image: &ImageRef) -> Result<EmbeddingVector> {
        let text = Self::image_text(image);
        if let Some(slug) = text.strip_prefix("exemplar:") {
            if let Some(v) = self.styles.get(slug) {
                return Ok(v.clone());
            }
        }
        let implicit: Vec<&EmbeddingVector> = self
            .presence(&text)
            .iter()
            .filter(|p| p.kind == BiasKind::Implicit)
            .filter_map(|p| self.styles.get(p.brand.canonical_name()))
            .collect();
        if implicit.is_empty() {
            return self.fallback.embed_image(image);
        }
        let mut acc = vec![0.0; self.dim];
        for v in implicit {
            for (a, x) in acc.iter_mut().zip(v.values()) {
                *a += x;
            }
        }
        EmbeddingVector::new(acc)?.normalized()
    }

    fn deconstruction_reply(&self, request: &VlmRequest) -> String {
        let profiles: Vec<Option<&BrandProfile>> =
            request.biases.iter().map(|b| self.profile(&b.brand)).collect();
        let core_subject = profiles
            .iter()
            .flatten()
            .next()
            .map(|p| p.subject.clone())
            .unwrap_or_else(|| request.prompt.clone());
        let mut seen: Vec<&str> = Vec::new();
        let mut biases = Vec::new();
        for (b, p) in request.biases.iter().zip(&profiles) {
            if seen.contains(&b.brand.as_str()) {
                continue;
            }
            seen.push(&b.brand);
            let feature = match p {
                Some(p) => json!({
                    "id": p.feature_id(),
                    "description": p.feature,
                    "alternatives": p.alternatives(),
                }),
                None => json!({
                    "id": alloc::format!("{}-signature", b.brand),
                    "description": alloc::format!("signature styling of {}", b.display_name),
                    "alternatives": [alloc::format!("an unbranded design with no {} cues", b.brand)],
                }),
            };
            biases.push(json!({"brand": b.brand, "features": [feature]}));
        }
        json!({"core_subject": core_subject, "biases": biases}).to_string()
    }

    fn judge_reply(&self, image: &ImageRef) -> String {
        let findings: Vec<_> = self
            .presence(&Self::image_text(image))
            .into_iter()
            .map(|p| json!({"brand": p.brand.canonical_name(), "confidence": p.confidence}))
            .collect();
        json!({ "findings": findings }).to_string()
    }
}

/// Logo detector that reports the world's explicit brands.
#[derive(Debug)]
pub struct WorldLogoDetector {
    world: Arc<World>,
    calls: AtomicU32,
}

impl LogoDetector for WorldLogoDetector {
    fn detect(&self, image: &ImageRef) -> Result<Vec<RawDetection>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = World::image_text(image);
        Ok(self
            .world
            .presence(&text)
            .into_iter()
            .filter(|p| p.kind == BiasKind::Explicit)
            .enumerate()
            .map(|(i, p)| RawDetection {
                label: p.brand.canonical_name().into(),
                confidence: p.confidence,
                bbox: BoundingBox {
                    x: 16.0 * i as f64,
                    y: 8.0,
                    w: 64.0,
                    h: 48.0,
                },
            })
            .collect())
    }
}

/// Embedder exposing the world's pinned geometry.
#[derive(Debug)]
pub struct WorldEmbedder {
    world: Arc<World>,
    calls: AtomicU32,
}

impl EmbeddingProvider for WorldEmbedder {
    fn dim(&self) -> usize {
        self.world.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if text.is_empty() {
            return Err(Error::EmptyInput("text"));
        }
        self.world.text_embedding(text)
    }

    fn embed_image(&self, image: &ImageRef) -> Result<EmbeddingVector> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        image.ensure_present()?;
        self.world.image_embedding(image)
    }
}

/// VLM answering deconstruction requests from the catalog. Optionally
/// prefixes `malformed_first` unparsable replies.
#[derive(Debug)]
pub struct WorldVlm {
    world: Arc<World>,
    calls: AtomicU32,
    malformed_first: u32,
}

impl VlmProvider for WorldVlm {
    fn complete(&self, request: &VlmRequest) -> Result<String> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.malformed_first {
            return Ok("I'd be happy to help! Here are some thoughts on the image.".into());
        }
        Ok(self.world.deconstruction_reply(request))
    }
}

/// Judge reporting every brand the world shows, explicit and implicit.
#[derive(Debug)]
pub struct WorldJudge {
    world: Arc<World>,
    calls: AtomicU32,
}

impl JudgeProvider for WorldJudge {
    fn judge(&self, image: &ImageRef) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        image.ensure_present()?;
        Ok(self.world.judge_reply(image))
    }
}

/// All five providers backed by one world, plus its aesthetics database.
#[derive(Debug)]
pub struct MockStack {
    pub world: Arc<World>,
    pub t2i: EchoGenerator,
    pub logos: WorldLogoDetector,
    pub embedder: WorldEmbedder,
    pub vlm: WorldVlm,
    pub judge: WorldJudge,
    pub db: AestheticsDatabase,
}

impl MockStack {
    pub fn new(world: World) -> Result<Self> {
        let world = Arc::new(world);
        let embedder = WorldEmbedder {
            world: world.clone(),
            calls: AtomicU32::new(0),
        };
        let db = world.aesthetics_db(&embedder)?;
        embedder.calls.store(0, Ordering::SeqCst);
        Ok(Self {
            t2i: EchoGenerator::new(),
            logos: WorldLogoDetector {
                world: world.clone(),
                calls: AtomicU32::new(0),
            },
            embedder,
            vlm: WorldVlm {
                world: world.clone(),
                calls: AtomicU32::new(0),
                malformed_first: 0,
            },
            judge: WorldJudge {
                world: world.clone(),
                calls: AtomicU32::new(0),
            },
            world,
            db,
        })
    }

    pub fn sample() -> Self {
        Self::new(World::sample()).expect("sample world builds")
    }

    /// The VLM's first `n` replies will be unparsable.
    pub fn with_malformed_vlm_replies(mut self, n: u32) -> Self {
        self.vlm.malformed_first = n;
        self
    }

    pub fn providers(&self) -> Providers<'_> {
        Providers {
            t2i: &self.t2i,
            logos: &self.logos,
            embedder: &self.embedder,
            vlm: &self.vlm,
            judge: &self.judge,
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        self.world.detector_config()
    }

    pub fn vlm_calls(&self) -> u32 {
        self.vlm.calls.load(Ordering::SeqCst)
    }

    pub fn judge_calls(&self) -> u32 {
        self.judge.calls.load(Ordering::SeqCst)
    }

    pub fn detector_calls(&self) -> u32 {
        self.logos.calls.load(Ordering::SeqCst)
    }

    pub fn t2i_calls(&self) -> u32 {
        self.t2i.calls()
    }
}
