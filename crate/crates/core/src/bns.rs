//! Brand Neutrality Score.
//!
//! A judge model lists the brands it sees in an image with confidences
//! `s_i`. Sorted descending, they form the penalty
//! `sum_i decay^(i-1) * s_i`, and the score is `exp(-strength * penalty)`:
//! 1.0 for a brand-free image, falling towards 0 as brands pile up. A decay
//! below 1 lets the most prominent brand dominate the penalty.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BrandId, ImageRef};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BnsConfig {
    pub decay: f64,
    pub strength: f64,
}

impl Default for BnsConfig {
    fn default() -> Self {
        Self {
            decay: 0.9,
            strength: 0.75,
        }
    }
}

impl BnsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid("decay must lie in (0, 1]"));
        }
        if !(self.strength > 0.0 && self.strength.is_finite()) {
            return Err(Error::invalid("strength must be positive"));
        }
        Ok(())
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    match scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        Some(s) => Err(Error::ScoreOutOfRange(*s)),
        None => Ok(()),
    }
}

/// Geometric-decay penalty over scores sorted in descending order.
pub fn penalty(scores: &[f64], decay: f64) -> Result<f64> {
    check_scores(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut weight = 1.0;
    let mut total = 0.0;
    for s in sorted {
        total += weight * s;
        weight *= decay;
    }
    Ok(total)
}

pub fn bns(scores: &[f64], config: &BnsConfig) -> Result<f64> {
    config.validate()?;
    Ok(libm::exp(-config.strength * penalty(scores, config.decay)?))
}

/// `100 * mean`, or `None` for an empty slice.
pub fn mean_percent(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(100.0 * values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub brand: BrandId,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    pub image_id: String,
    pub findings: Vec<Finding>,
}

impl JudgeReport {
    pub fn scores(&self) -> Vec<f64> {
        self.findings.iter().map(|f| f.confidence).collect()
    }
}

/// Evaluation judge. Kept separate from the pipeline's detector so the
/// pipeline does not grade its own output. Returns the raw reply text.
pub trait JudgeProvider: Send + Sync {
    fn judge(&self, image: &ImageRef) -> Result<String>;
}

#[derive(Deserialize)]
struct JudgeDoc {
    findings: Vec<JudgeFinding>,
}

#[derive(Deserialize)]
struct JudgeFinding {
    brand: String,
    confidence: f64,
}

/// Parses `{"findings":[{"brand","confidence"}...]}`. Out-of-range
/// confidences are an error, never clamped.
pub fn parse_judge_reply(raw: &str, image_id: &str) -> Result<JudgeReport> {
    let start = raw.find('{');
    let end = raw.rfind('}');
    let body = match (start, end) {
        (Some(s), Some(e)) if e > s => &raw[s..=e],
        _ => return Err(Error::MalformedVlmOutput("no JSON object in judge reply".into())),
    };
    let doc: JudgeDoc =
        serde_json::from_str(body).map_err(|e| Error::MalformedVlmOutput(alloc::format!("{e}")))?;
    let mut findings = Vec::with_capacity(doc.findings.len());
    for f in doc.findings {
        if !(0.0..=1.0).contains(&f.confidence) {
            return Err(Error::ScoreOutOfRange(f.confidence));
        }
        let brand = BrandId::from_display(f.brand.trim())
            .map_err(|_| Error::MalformedVlmOutput(alloc::format!("bad brand `{}`", f.brand)))?;
        findings.push(Finding {
            brand,
            confidence: f.confidence,
        });
    }
    Ok(JudgeReport {
        image_id: image_id.into(),
        findings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchBns {
    /// Per input image, `None` where judging failed.
    pub per_image: Vec<Option<f64>>,
    pub failures: Vec<(usize, Error)>,
    /// Mean over successful images, in percent.
    pub mean_percent: Option<f64>,
}

pub struct BnsEvaluator<'a> {
    config: BnsConfig,
    judge: &'a dyn JudgeProvider,
}

impl<'a> BnsEvaluator<'a> {
    pub fn new(config: BnsConfig, judge: &'a dyn JudgeProvider) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, judge })
    }

    pub fn config(&self) -> &BnsConfig {
        &self.config
    }

    pub fn judge(&self, image: &ImageRef) -> Result<JudgeReport> {
        image.ensure_present()?;
        let raw = self.judge.judge(image)?;
        parse_judge_reply(&raw, &image.id)
    }

    pub fn score(&self, image: &ImageRef) -> Result<(JudgeReport, f64)> {
        let report = self.judge(image)?;
        let score = bns(&report.scores(), &self.config)?;
        Ok((report, score))
    }

    pub fn batch(&self, images: &[ImageRef]) -> Result<BatchBns> {
        if images.is_empty() {
            return Err(Error::EmptyInput("images"));
        }
        let mut per_image = Vec::with_capacity(images.len());
        let mut failures = Vec::new();
        for (i, img) in images.iter().enumerate() {
            match self.score(img) {
                Ok((_, s)) => per_image.push(Some(s)),
                Err(e) => {
                    log::warn!("judge failed on image {}: {e}", img.id);
                    per_image.push(None);
                    failures.push((i, e));
                }
            }
        }
        let ok: Vec<f64> = per_image.iter().flatten().copied().collect();
        Ok(BatchBns {
            mean_percent: mean_percent(&ok),
            per_image,
            failures,
        })
    }
}
