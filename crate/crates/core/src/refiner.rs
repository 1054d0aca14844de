//! Causal correction: a VLM deconstructs each detected bias into features and
//! proposes alternatives, the alternatives are scored against the feature and
//! the prompt's core subject, and the winners are appended to the prompt.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::model::{
    is_slug, slugify, BiasKind, BiasSet, BrandId, ImageRef, MediatorSet, Modifier, Prompt,
    Provenance, RefinedPrompt,
};

/// Versioned persona and few-shot template sent as the VLM system message.
pub const PERSONA_TEMPLATE_V1: &str = include_str!("../assets/persona_v1.txt");
pub const PERSONA_TEMPLATE_VERSION: u32 = 1;

pub const DEFAULT_MODIFIER_TEMPLATE: &str = "featuring {}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub feature_id: String,
    pub bias: BrandId,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModifier {
    pub text: String,
    pub feature: String,
    pub score: Option<f64>,
}

/// One feature of a bias together with the alternatives proposed for it, in VLM order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAlternatives {
    pub feature: FeatureRecord,
    pub candidates: Vec<CandidateModifier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDeconstruction {
    pub bias: BrandId,
    pub features: Vec<FeatureAlternatives>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconstructionResponse {
    pub core_subject: String,
    pub biases: Vec<BiasDeconstruction>,
}

impl DeconstructionResponse {
    pub fn features(&self) -> impl Iterator<Item = &FeatureAlternatives> {
        self.biases.iter().flat_map(|b| b.features.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    /// Weight of aesthetic divergence against subject relevance.
    pub w: f64,
    pub candidates_per_feature: usize,
    pub selected_per_feature: usize,
    /// `false` takes the first listed alternative (direct rewrite, no scoring).
    pub scoring_enabled: bool,
    /// Upper bound on modifiers entering the refined prompt.
    pub max_modifiers: usize,
    /// Phrase template for one modifier; `{}` is replaced by the modifier text.
    pub modifier_template: String,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            w: 0.4,
            candidates_per_feature: 5,
            selected_per_feature: 1,
            scoring_enabled: true,
            max_modifiers: 6,
            modifier_template: DEFAULT_MODIFIER_TEMPLATE.into(),
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::invalid("w must lie in [0, 1]"));
        }
        if self.candidates_per_feature == 0 || self.selected_per_feature == 0 {
            return Err(Error::invalid("candidate and selection counts must be positive"));
        }
        if self.selected_per_feature > self.candidates_per_feature {
            return Err(Error::invalid("selected_per_feature must not exceed candidates_per_feature"));
        }
        if self.max_modifiers == 0 {
            return Err(Error::invalid("max_modifiers must be positive"));
        }
        if !self.modifier_template.contains("{}") {
            return Err(Error::invalid("modifier template needs a `{}` placeholder"));
        }
        Ok(())
    }

    pub fn system_prompt(&self) -> String {
        PERSONA_TEMPLATE_V1.replace("{k}", &self.candidates_per_feature.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmBias {
    pub brand: String,
    pub display_name: String,
    pub kind: BiasKind,
}

/// One deconstruction request. `retry_feedback` is set on the single retry
/// after an unparsable reply.
#[derive(Debug, Clone, PartialEq)]
pub struct VlmRequest {
    pub system: String,
    pub image: ImageRef,
    pub biases: Vec<VlmBias>,
    pub prompt: String,
    pub retry_feedback: Option<String>,
}

/// Vision-language model used for deconstruction. Returns the raw reply text.
pub trait VlmProvider: Send + Sync {
    fn complete(&self, request: &VlmRequest) -> Result<String>;
}

#[derive(Deserialize)]
struct ReplyDoc {
    #[serde(default)]
    core_subject: Option<String>,
    biases: Vec<ReplyBias>,
}

#[derive(Deserialize)]
struct ReplyBias {
    brand: String,
    features: Vec<ReplyFeature>,
}

#[derive(Deserialize)]
struct ReplyFeature {
    id: String,
    description: String,
    alternatives: Vec<String>,
}

/// Cuts the outermost `{...}` out of a reply, which tolerates code fences and chatter.
fn json_body(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

/// Parses and validates a deconstruction reply against the requested biases.
pub fn parse_deconstruction(
    raw: &str,
    biases: &BiasSet,
    prompt: &Prompt,
    max_candidates: usize,
) -> Result<DeconstructionResponse> {
    let body = json_body(raw).ok_or_else(|| Error::MalformedVlmOutput("no JSON object in reply".into()))?;
    let doc: ReplyDoc = serde_json::from_str(body)
        .map_err(|e| Error::MalformedVlmOutput(alloc::format!("{e}")))?;

    let known = biases.brands();
    let core_subject = doc
        .core_subject
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| prompt.text().to_string());

    let mut out: Vec<BiasDeconstruction> = Vec::new();
    for rb in doc.biases {
        let slug = slugify(&rb.brand);
        let brand = known
            .iter()
            .find(|b| b.canonical_name() == slug || b.display_name().eq_ignore_ascii_case(rb.brand.trim()))
            .cloned()
            .ok_or_else(|| Error::BiasMismatch(rb.brand.clone()))?;
        if out.iter().any(|d| d.bias == brand) {
            return Err(Error::MalformedVlmOutput(alloc::format!(
                "brand `{brand}` listed twice"
            )));
        }
        let mut features: Vec<FeatureAlternatives> = Vec::new();
        for rf in rb.features {
            let feature_id = if is_slug(&rf.id) { rf.id } else { slugify(&rf.id) };
            if feature_id.is_empty() || rf.description.trim().is_empty() {
                return Err(Error::MalformedVlmOutput("feature needs an id and a description".into()));
            }
            if features.iter().any(|f| f.feature.feature_id == feature_id) {
                return Err(Error::MalformedVlmOutput(alloc::format!(
                    "duplicate feature id `{feature_id}`"
                )));
            }
            let mut candidates: Vec<CandidateModifier> = Vec::new();
            for alt in rf.alternatives {
                let text = alt.trim();
                if text.is_empty()
                    || text.eq_ignore_ascii_case(brand.display_name())
                    || text.eq_ignore_ascii_case(brand.canonical_name())
                    || candidates.iter().any(|c| c.text == text)
                {
                    continue;
                }
                candidates.push(CandidateModifier {
                    text: text.into(),
                    feature: feature_id.clone(),
                    score: None,
                });
            }
            candidates.truncate(max_candidates);
            if candidates.is_empty() {
                return Err(Error::MalformedVlmOutput(alloc::format!(
                    "feature `{feature_id}` has no usable alternatives"
                )));
            }
            features.push(FeatureAlternatives {
                feature: FeatureRecord {
                    feature_id,
                    bias: brand.clone(),
                    description: rf.description.trim().into(),
                },
                candidates,
            });
        }
        out.push(BiasDeconstruction {
            bias: brand,
            features,
        });
    }
    if out.iter().all(|b| b.features.is_empty()) {
        return Err(Error::MalformedVlmOutput("reply contains no features".into()));
    }
    out.sort_by(|a, b| a.bias.cmp(&b.bias));
    Ok(DeconstructionResponse {
        core_subject,
        biases: out,
    })
}

/// Candidate score from already computed cosines.
pub fn score_from_cosines(cos_feature: f64, cos_subject: f64, w: f64) -> f64 {
    w * (1.0 - cos_feature) + (1.0 - w) * cos_subject
}

fn checked_score(cos_feature: f64, cos_subject: f64, w: f64) -> Result<f64> {
    let s = score_from_cosines(cos_feature, cos_subject, w);
    if !(-1.0..=2.0).contains(&s) {
        return Err(Error::Invariant(alloc::format!("candidate score {s} outside [-1, 2]")));
    }
    Ok(s)
}

/// Divergence from the feature weighted by `w`, relevance to the subject by `1 - w`.
pub fn score_candidate(
    embedder: &dyn EmbeddingProvider,
    candidate: &str,
    feature: &str,
    core_subject: &str,
    w: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid("w must lie in [0, 1]"));
    }
    let a = embedder.embed_text(candidate)?;
    let f = embedder.embed_text(feature)?;
    let subject = embedder.embed_text(core_subject)?;
    checked_score(cosine(&a, &f)?, cosine(&a, &subject)?, w)
}

/// Result of a deconstruction together with the VLM calls it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Deconstruction {
    pub response: DeconstructionResponse,
    pub vlm_calls: u32,
}

pub struct Refiner<'a> {
    config: RefinerConfig,
    vlm: &'a dyn VlmProvider,
    embedder: &'a dyn EmbeddingProvider,
}

impl<'a> Refiner<'a> {
    pub fn new(
        config: RefinerConfig,
        vlm: &'a dyn VlmProvider,
        embedder: &'a dyn EmbeddingProvider,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            vlm,
            embedder,
        })
    }

    pub fn config(&self) -> &RefinerConfig {
        &self.config
    }

    /// One VLM call, plus one retry if the reply does not parse.
    pub fn deconstruct(
        &self,
        image: &ImageRef,
        biases: &BiasSet,
        prompt: &Prompt,
    ) -> Result<Deconstruction> {
        if biases.is_empty() {
            return Err(Error::invalid("deconstruct needs a non-empty bias set"));
        }
        image.ensure_present()?;
        let mut request = VlmRequest {
            system: self.config.system_prompt(),
            image: image.clone(),
            biases: biases
                .iter()
                .map(|r| VlmBias {
                    brand: r.brand.canonical_name().into(),
                    display_name: r.brand.display_name().into(),
                    kind: r.kind(),
                })
                .collect(),
            prompt: prompt.text().into(),
            retry_feedback: None,
        };
        let mut calls = 0;
        loop {
            let raw = self.vlm.complete(&request)?;
            calls += 1;
            match parse_deconstruction(&raw, biases, prompt, self.config.candidates_per_feature) {
                Ok(response) => {
                    return Ok(Deconstruction {
                        response,
                        vlm_calls: calls,
                    })
                }
                Err(Error::MalformedVlmOutput(reason)) if calls == 1 => {
                    log::warn!("unparsable VLM reply, retrying once: {reason}");
                    request.retry_feedback = Some(alloc::format!(
                        "Your previous reply could not be parsed ({reason}). Reply with exactly one JSON document in the requested schema."
                    ));
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn scored(&self, feature: &FeatureAlternatives, subject: &EmbeddingVector) -> Result<Vec<CandidateModifier>> {
        let ef = self.embedder.embed_text(&feature.feature.description)?;
        let mut scored = feature
            .candidates
            .iter()
            .map(|c| {
                let ea = self.embedder.embed_text(&c.text)?;
                let s = checked_score(cosine(&ea, &ef)?, cosine(&ea, subject)?, self.config.w)?;
                Ok(CandidateModifier {
                    score: Some(s),
                    ..c.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.text.cmp(&b.text))
        });
        Ok(scored)
    }

    /// Top candidates per feature (or the first listed ones when scoring is
    /// off), unioned across features and biases into the mediator.
    pub fn select_modifiers(&self, response: &DeconstructionResponse) -> Result<MediatorSet> {
        let n = self.config.selected_per_feature;
        let subject = if self.config.scoring_enabled {
            Some(self.embedder.embed_text(&response.core_subject)?)
        } else {
            None
        };
        // (rank within feature, modifier)
        let mut picked: Vec<(usize, Modifier)> = Vec::new();
        for bias in &response.biases {
            for feature in &bias.features {
                let chosen = match &subject {
                    Some(subject) => self.scored(feature, subject)?,
                    None => feature.candidates.clone(),
                };
                for (rank, c) in chosen.into_iter().take(n).enumerate() {
                    picked.push((
                        rank,
                        Modifier {
                            text: c.text,
                            replaces_feature: feature.feature.feature_id.clone(),
                            source_bias: bias.bias.clone(),
                            score: c.score,
                        },
                    ));
                }
            }
        }
        if picked.len() > self.config.max_modifiers {
            // every feature keeps its best pick before any feature gets a second one
            picked.sort_by(|a, b| {
                a.0.cmp(&b.0).then_with(|| {
                    b.1.score
                        .partial_cmp(&a.1.score)
                        .unwrap_or(Ordering::Equal)
                })
            });
            picked.truncate(self.config.max_modifiers);
        }
        Ok(MediatorSet::new(
            picked.into_iter().map(|(_, m)| m).collect(),
            Provenance::FreshVlm,
        ))
    }

    pub fn augment_prompt(&self, prompt: &Prompt, mediator: &MediatorSet) -> Result<RefinedPrompt> {
        augment_prompt(prompt, mediator, &self.config.modifier_template)
    }
}

/// Appends `template(modifier)` phrases to the prompt, comma separated. The
/// base text is kept verbatim; a trailing comma is not doubled.
pub fn augment_prompt(prompt: &Prompt, mediator: &MediatorSet, template: &str) -> Result<RefinedPrompt> {
    if mediator.is_empty() {
        return Err(Error::invalid("cannot augment a prompt with an empty mediator"));
    }
    let phrases: Vec<String> = mediator
        .modifiers()
        .iter()
        .map(|m| template.replace("{}", m.text.trim()))
        .collect();
    let base = prompt.text();
    let trimmed = base.trim_end();
    let sep = if trimmed.ends_with(',') {
        if trimmed.len() == base.len() {
            " "
        } else {
            ""
        }
    } else {
        ", "
    };
    let rendered_text = alloc::format!("{base}{sep}{}", phrases.join(", "));
    Ok(RefinedPrompt {
        base: prompt.clone(),
        modifiers: mediator.modifiers().to_vec(),
        rendered_text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::MockEmbedder;
    use crate::model::{BiasRecord, BoundingBox};
    use alloc::vec;

    fn brand(s: &str) -> BrandId {
        BrandId::from_display(s).unwrap()
    }

    fn modifier(text: &str, feature: &str, b: &str) -> Modifier {
        Modifier {
            text: text.into(),
            replaces_feature: feature.into(),
            source_bias: brand(b),
            score: None,
        }
    }

    fn apple_set() -> BiasSet {
        let mut s = BiasSet::new();
        s.insert(
            BiasRecord::explicit(brand("apple"), 0.9, BoundingBox::new(0.0, 0.0, 5.0, 5.0).unwrap(), "apple")
                .unwrap(),
        );
        s
    }

    #[test]
    fn augment_examples() {
        let p = Prompt::new("a laptop on a desk").unwrap();
        let m = MediatorSet::new(
            vec![modifier("a matte slate-gray minimalist laptop", "f", "apple")],
            Provenance::FreshVlm,
        );
        let r = augment_prompt(&p, &m, DEFAULT_MODIFIER_TEMPLATE).unwrap();
        assert_eq!(
            r.rendered_text,
            "a laptop on a desk, featuring a matte slate-gray minimalist laptop"
        );

        let two = MediatorSet::new(
            vec![modifier("x", "a", "apple"), modifier("y", "b", "apple")],
            Provenance::FreshVlm,
        );
        let r = augment_prompt(&p, &two, DEFAULT_MODIFIER_TEMPLATE).unwrap();
        assert_eq!(r.rendered_text, "a laptop on a desk, featuring x, featuring y");

        let comma = Prompt::new("a laptop on a desk,").unwrap();
        let r = augment_prompt(&comma, &m, DEFAULT_MODIFIER_TEMPLATE).unwrap();
        assert!(!r.rendered_text.contains(",,"));
        assert!(r.rendered_text.contains(comma.text()));
        let comma_space = Prompt::new("a laptop, ").unwrap();
        let r = augment_prompt(&comma_space, &m, DEFAULT_MODIFIER_TEMPLATE).unwrap();
        assert_eq!(r.rendered_text, "a laptop, featuring a matte slate-gray minimalist laptop");

        let empty = MediatorSet::new(vec![], Provenance::FreshVlm);
        assert!(augment_prompt(&p, &empty, DEFAULT_MODIFIER_TEMPLATE).is_err());
    }

    #[test]
    fn score_identity_and_endpoints() {
        let m = MockEmbedder::default();
        let s = score_candidate(&m, "silver shell", "silver shell", "laptop", 1.0).unwrap();
        assert_eq!(s, 0.0);
        let s0 = score_candidate(&m, "matte shell", "silver shell", "laptop", 0.0).unwrap();
        let rel = cosine(&m.embed_text("matte shell").unwrap(), &m.embed_text("laptop").unwrap()).unwrap();
        assert_eq!(s0, rel);
        assert!(score_candidate(&m, "a", "b", "c", 1.5).is_err());
    }

    #[test]
    fn score_from_pinned_cosines() {
        // w = 0.4, cos(a, f) = 0.2, cos(a, subject) = 0.8: 0.4 * 0.8 + 0.6 * 0.8
        assert!((score_from_cosines(0.2, 0.8, 0.4) - 0.80).abs() < 1e-12);
    }

    #[test]
    fn parse_tolerates_fences_and_falls_back_on_subject() {
        let raw = "```json\n{\"biases\":[{\"brand\":\"Apple\",\"features\":[{\"id\":\"Lid Logo\",\"description\":\"fruit logo\",\"alternatives\":[\"apple\",\"plain lid\",\"plain lid\"]}]}]}\n```";
        let p = Prompt::new("a laptop on a desk").unwrap();
        let r = parse_deconstruction(raw, &apple_set(), &p, 5).unwrap();
        assert_eq!(r.core_subject, "a laptop on a desk");
        let f = &r.biases[0].features[0];
        assert_eq!(f.feature.feature_id, "lid-logo");
        // brand name and duplicate dropped
        assert_eq!(f.candidates.len(), 1);
    }

    #[test]
    fn parse_errors() {
        let p = Prompt::new("a laptop").unwrap();
        assert!(matches!(
            parse_deconstruction("sorry, I can't", &apple_set(), &p, 5),
            Err(Error::MalformedVlmOutput(_))
        ));
        let foreign = r#"{"core_subject":"x","biases":[{"brand":"nike","features":[{"id":"a","description":"b","alternatives":["c"]}]}]}"#;
        assert_eq!(
            parse_deconstruction(foreign, &apple_set(), &p, 5),
            Err(Error::BiasMismatch("nike".into()))
        );
        let no_alts = r#"{"core_subject":"x","biases":[{"brand":"apple","features":[{"id":"a","description":"b","alternatives":[]}]}]}"#;
        assert!(matches!(
            parse_deconstruction(no_alts, &apple_set(), &p, 5),
            Err(Error::MalformedVlmOutput(_))
        ));
        let none = r#"{"core_subject":"x","biases":[]}"#;
        assert!(matches!(
            parse_deconstruction(none, &apple_set(), &p, 5),
            Err(Error::MalformedVlmOutput(_))
        ));
    }

    #[test]
    fn parse_truncates_to_k() {
        let raw = r#"{"core_subject":"laptop","biases":[{"brand":"apple","features":[{"id":"a","description":"b","alternatives":["1","2","3","4"]}]}]}"#;
        let p = Prompt::new("a laptop").unwrap();
        let r = parse_deconstruction(raw, &apple_set(), &p, 2).unwrap();
        assert_eq!(r.biases[0].features[0].candidates.len(), 2);
    }

    #[test]
    fn config_validation() {
        let mut c = RefinerConfig::default();
        assert!(c.validate().is_ok());
        c.selected_per_feature = 6;
        assert!(c.validate().is_err());
        let c = RefinerConfig {
            modifier_template: "with".into(),
            ..RefinerConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(RefinerConfig::default().system_prompt().contains("propose 5 alternative"));
    }
}
