//! End-to-end orchestration: generate, detect, look up or build the mediator,
//! augment the prompt and regenerate with the same seed.
//!
//! The stages map onto the three factors of the front-door adjustment: the
//! initial image stands for `p(I | P)`, the mediator for `p(M | I, P)` and the
//! regenerated image for `p(I' | M, P)`. Nothing here evaluates that sum
//! numerically; the record just carries evidence for each factor.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::aesthetics::AestheticsDatabase;
use crate::bns::{BnsConfig, BnsEvaluator, JudgeProvider};
use crate::cache::RedirectionCache;
use crate::detector::{BiasDetector, DetectorConfig, LogoDetector};
use crate::embedding::EmbeddingProvider;
use crate::error::Error;
use crate::model::{Condition, ImageRef, MediatorSet, Prompt, Provenance, RefinedPrompt, RunRecord};
use crate::refiner::{Refiner, RefinerConfig, VlmProvider};

pub const DEFAULT_NEGATIVE_SUFFIX: &str = ", no logos, no brand names";

/// Text-to-image backend.
pub trait ImageGenerator: Send + Sync {
    fn generate(&self, prompt: &str, seed: u64) -> Result<ImageRef, Error>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generate,
    Judge,
    Detect,
    Cache,
    Deconstruct,
    Select,
    Augment,
    Regenerate,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Judge => "judge",
            Stage::Detect => "detect",
            Stage::Cache => "cache",
            Stage::Deconstruct => "deconstruct",
            Stage::Select => "select",
            Stage::Augment => "augment",
            Stage::Regenerate => "regenerate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T> AtStage<T> for Result<T, Error> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub condition: Condition,
    /// Detect/refine passes; 1 is the plain single-pass intervention.
    pub max_rounds: u32,
    pub seed: u64,
    pub negative_suffix: String,
    pub detector: DetectorConfig,
    pub refiner: RefinerConfig,
    pub bns: BnsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            condition: Condition::CiderFull,
            max_rounds: 1,
            seed: 0,
            negative_suffix: DEFAULT_NEGATIVE_SUFFIX.into(),
            detector: DetectorConfig::default(),
            refiner: RefinerConfig::default(),
            bns: BnsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.max_rounds == 0 {
            return Err(Error::invalid("max_rounds must be at least 1"));
        }
        self.detector.validate()?;
        self.refiner.validate()?;
        self.bns.validate()
    }
}

/// Borrowed handles to every external model the pipeline talks to.
#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub t2i: &'a dyn ImageGenerator,
    pub logos: &'a dyn LogoDetector,
    pub embedder: &'a dyn EmbeddingProvider,
    pub vlm: &'a dyn VlmProvider,
    pub judge: &'a dyn JudgeProvider,
}

pub struct Pipeline<'a> {
    config: PipelineConfig,
    providers: Providers<'a>,
    db: &'a AestheticsDatabase,
    detector: BiasDetector<'a>,
    evaluator: BnsEvaluator<'a>,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        config: PipelineConfig,
        providers: Providers<'a>,
        db: &'a AestheticsDatabase,
    ) -> Result<Self, Error> {
        config.validate()?;
        let detector = BiasDetector::new(config.detector.clone(), providers.logos, providers.embedder)?;
        let evaluator = BnsEvaluator::new(config.bns, providers.judge)?;
        Ok(Self {
            config,
            providers,
            db,
            detector,
            evaluator,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn detector(&self) -> &BiasDetector<'a> {
        &self.detector
    }

    pub fn evaluator(&self) -> &BnsEvaluator<'a> {
        &self.evaluator
    }

    pub fn generate(&self, prompt_text: &str, seed: u64) -> Result<ImageRef, Error> {
        if prompt_text.trim().is_empty() {
            return Err(Error::EmptyInput("prompt text"));
        }
        let mut image = self.providers.t2i.generate(prompt_text, seed)?;
        if image.source_prompt.is_empty() {
            image.source_prompt = prompt_text.into();
        }
        Ok(image)
    }

    /// Runs the configured condition with the configured seed.
    pub fn run(
        &self,
        prompt: &Prompt,
        cache: Option<&mut RedirectionCache>,
    ) -> Result<RunRecord, PipelineError> {
        self.run_with(prompt, self.config.condition, self.config.seed, cache)
    }

    /// Runs one prompt under `condition`. The cache, when given, should be
    /// dedicated to one condition: mediators from different selection modes
    /// must not mix.
    pub fn run_with(
        &self,
        prompt: &Prompt,
        condition: Condition,
        seed: u64,
        mut cache: Option<&mut RedirectionCache>,
    ) -> Result<RunRecord, PipelineError> {
        let generated_text = match condition {
            Condition::NegativePrompt => alloc::format!("{}{}", prompt.text(), self.config.negative_suffix),
            _ => prompt.text().into(),
        };
        let initial = self.generate(&generated_text, seed).at(Stage::Generate)?;
        let bns_initial = self.evaluator.score(&initial).at(Stage::Judge)?.1;

        let mut record = RunRecord {
            prompt: prompt.clone(),
            condition,
            generated_text,
            initial_image: initial.clone(),
            bias_set: Default::default(),
            mediator: None,
            refined: None,
            final_image: initial.clone(),
            bns_initial,
            bns_final: bns_initial,
            vlm_calls: 0,
            cache_hit: false,
            rounds: 0,
            seed,
        };
        if !condition.intervenes() {
            return Ok(record);
        }

        let mut refiner_config = self.config.refiner.clone();
        refiner_config.scoring_enabled = condition == Condition::CiderFull;
        let refiner = Refiner::new(refiner_config, self.providers.vlm, self.providers.embedder)
            .at(Stage::Select)?;

        let mut biases = self.detector.detect_all(&initial, self.db).at(Stage::Detect)?;
        record.bias_set = biases.clone();
        if biases.is_empty() {
            return Ok(record);
        }

        let mut current = initial;
        let mut accumulated: Vec<crate::model::Modifier> = Vec::new();
        let mut refined: Option<RefinedPrompt> = None;
        let mut mediator: Option<MediatorSet> = None;
        for round in 1..=self.config.max_rounds {
            let cached = match cache.as_deref_mut() {
                Some(c) => c.lookup(&biases).at(Stage::Cache)?,
                None => None,
            };
            let round_mediator = match cached {
                Some(m) => {
                    record.cache_hit = true;
                    m
                }
                None => {
                    let d = refiner
                        .deconstruct(&current, &biases, prompt)
                        .at(Stage::Deconstruct)?;
                    record.vlm_calls += d.vlm_calls;
                    if record.prompt.core_subject().is_none() {
                        record.prompt = record.prompt.clone().with_core_subject(d.response.core_subject.clone());
                    }
                    let m = refiner.select_modifiers(&d.response).at(Stage::Select)?;
                    if let Some(c) = cache.as_deref_mut() {
                        c.insert(&biases, &m).at(Stage::Cache)?;
                    }
                    m
                }
            };
            if round_mediator.is_empty() {
                return Err(Error::Invariant("mediator is empty".into())).at(Stage::Select);
            }
            for m in round_mediator.modifiers() {
                if !accumulated.iter().any(|a| a.text == m.text) {
                    accumulated.push(m.clone());
                }
            }
            let provenance = if record.cache_hit && record.vlm_calls == 0 {
                Provenance::CacheHit
            } else {
                Provenance::FreshVlm
            };
            let combined = MediatorSet::new(accumulated.clone(), provenance);
            let p = refiner.augment_prompt(prompt, &combined).at(Stage::Augment)?;
            current = self.generate(&p.rendered_text, seed).at(Stage::Regenerate)?;
            refined = Some(p);
            mediator = Some(combined);
            record.rounds = round;

            if round < self.config.max_rounds {
                biases = self.detector.detect_all(&current, self.db).at(Stage::Detect)?;
                if biases.is_empty() {
                    break;
                }
            }
        }

        record.bns_final = self.evaluator.score(&current).at(Stage::Judge)?.1;
        record.final_image = current;
        record.mediator = mediator;
        record.refined = refined;
        Ok(record)
    }
}
