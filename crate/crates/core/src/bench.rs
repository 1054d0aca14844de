//! Benchmark harness: prompt datasets, the condition matrix, the `w` sweep
//! and the redirection-cache ablation.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aesthetics::AestheticsDatabase;
use crate::bns::mean_percent;
use crate::cache::{CacheConfig, RedirectionCache};
use crate::embedding::stable_hash64;
use crate::error::Error;
use crate::model::{is_slug, BrandId, Condition, ImageRef, Prompt, RunRecord};
use crate::pipeline::{Pipeline, PipelineConfig, PipelineError, Providers};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("duplicate prompt id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Core(#[from] Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Technology,
    Food,
    Apparel,
    Beverages,
    Automotive,
    Entertainment,
    Sports,
    Photography,
    Home,
    Toys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    SingleBias,
    Combinatorial,
}

/// One benchmark prompt with its annotated brands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPrompt {
    pub id: String,
    pub text: String,
    pub domain: Domain,
    pub kind: PromptKind,
    #[serde(with = "brand_names")]
    pub expected_biases: Vec<BrandId>,
    /// Marks prompts written for the sample rather than taken from published figures.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub synthetic: bool,
}

impl BenchPrompt {
    pub fn validate(&self) -> Result<(), BenchError> {
        if !is_slug(&self.id) {
            return Err(BenchError::Schema(alloc::format!(
                "prompt id `{}` must match [a-z0-9-]+",
                self.id
            )));
        }
        if self.text.trim().is_empty() {
            return Err(BenchError::Schema(alloc::format!("prompt `{}` has empty text", self.id)));
        }
        let n = self.expected_biases.len();
        match self.kind {
            PromptKind::SingleBias if n > 1 => Err(BenchError::Schema(alloc::format!(
                "single-bias prompt `{}` lists {n} brands",
                self.id
            ))),
            PromptKind::Combinatorial if n < 2 => Err(BenchError::Schema(alloc::format!(
                "combinatorial prompt `{}` needs at least two brands",
                self.id
            ))),
            _ => Ok(()),
        }
    }

    pub fn prompt(&self) -> Result<Prompt, Error> {
        Prompt::new(self.text.clone())
    }

    /// Stable per-prompt seed, identical across conditions.
    pub fn seed(&self, base_seed: u64) -> u64 {
        stable_hash64(&[b"prompt-seed", &base_seed.to_le_bytes(), self.id.as_bytes()])
    }
}

mod brand_names {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(brands: &[BrandId], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(brands.iter().map(BrandId::canonical_name))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BrandId>, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        names
            .iter()
            .map(|n| BrandId::from_display(n).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Parses a JSON-lines dataset. Blank lines are skipped; ids must be unique.
pub fn parse_dataset(text: &str) -> Result<Vec<BenchPrompt>, BenchError> {
    let mut out: Vec<BenchPrompt> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: BenchPrompt = serde_json::from_str(line)
            .map_err(|e| BenchError::Schema(alloc::format!("line {}: {e}", i + 1)))?;
        p.validate()?;
        if out.iter().any(|q| q.id == p.id) {
            return Err(BenchError::DuplicateId(p.id));
        }
        out.push(p);
    }
    if out.is_empty() {
        return Err(BenchError::Schema("dataset contains no prompts".into()));
    }
    Ok(out)
}

/// Optional image-quality scorer (aesthetics, preference models, ...).
pub trait QualityProvider: Send + Sync {
    /// Named scalar scores for one image.
    fn score(&self, image: &ImageRef, prompt: &str) -> Result<BTreeMap<String, f64>, Error>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptScore {
    pub prompt_id: String,
    pub bns_initial: f64,
    pub bns_final: f64,
    pub vlm_calls: u32,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub prompt_id: String,
    pub stage: String,
    pub message: String,
}

impl ItemFailure {
    fn from_pipeline(prompt_id: &str, e: &PipelineError) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            stage: e.stage.as_str().into(),
            message: e.source.to_string(),
        }
    }
}

/// One `(model, condition)` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub condition: Condition,
    pub mean_bns_percent: Option<f64>,
    pub per_prompt: Vec<PromptScore>,
    /// Mean quality scores over final images; empty without a quality provider.
    pub quality: BTreeMap<String, f64>,
    pub vlm_calls: u64,
    pub cache_hits: u64,
    /// Share of annotated brands the detector found, for intervening conditions.
    pub detection_recall: Option<f64>,
    pub failures: Vec<ItemFailure>,
}

impl ReportRow {
    pub fn attempted(&self) -> usize {
        self.per_prompt.len() + self.failures.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<ReportRow>,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
}

impl BenchReport {
    pub fn row(&self, condition: Condition) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.condition == condition)
    }

    /// Names of every quality metric that appears in any row, sorted.
    pub fn quality_metrics(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .rows
            .iter()
            .flat_map(|r| r.quality.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    }
}

/// Relative change against a baseline, in percent.
pub fn percent_change(baseline: f64, value: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (value - baseline) / baseline * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub w: f64,
    pub mean_bns_percent: Option<f64>,
    pub failures: usize,
}

/// Mean cumulative refinement-VLM calls after each request, with and without the cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub runs: usize,
    pub cache_on: Vec<f64>,
    pub cache_off: Vec<f64>,
    /// Final cumulative count of every individual run.
    pub final_on: Vec<u32>,
    pub final_off: Vec<u32>,
    pub failures: usize,
}

/// Cumulative VLM calls of one replay and its failure count.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub cumulative: Vec<u32>,
    pub failures: usize,
}

/// Pointwise means of several replays of equal length.
pub fn average_replays(on: &[Replay], off: &[Replay]) -> AblationCurve {
    let mean = |rs: &[Replay]| -> Vec<f64> {
        let len = rs.first().map_or(0, |r| r.cumulative.len());
        (0..len)
            .map(|i| rs.iter().map(|r| f64::from(r.cumulative[i])).sum::<f64>() / rs.len() as f64)
            .collect()
    };
    let last = |rs: &[Replay]| -> Vec<u32> {
        rs.iter()
            .map(|r| r.cumulative.last().copied().unwrap_or(0))
            .collect()
    };
    AblationCurve {
        runs: on.len(),
        cache_on: mean(on),
        cache_off: mean(off),
        final_on: last(on),
        final_off: last(off),
        failures: on.iter().chain(off).map(|r| r.failures).sum(),
    }
}

pub struct Bench<'a> {
    pub providers: Providers<'a>,
    pub db: &'a AestheticsDatabase,
    pub config: PipelineConfig,
    pub cache: CacheConfig,
    pub quality: Option<&'a dyn QualityProvider>,
    /// Row label for the generator under test.
    pub model: String,
}

impl<'a> Bench<'a> {
    pub fn new(providers: Providers<'a>, db: &'a AestheticsDatabase, config: PipelineConfig) -> Self {
        Self {
            providers,
            db,
            config,
            cache: CacheConfig::default(),
            quality: None,
            model: "t2i".into(),
        }
    }

    fn pipeline(&self, config: PipelineConfig) -> Result<Pipeline<'a>, BenchError> {
        Ok(Pipeline::new(config, self.providers, self.db)?)
    }

    /// Runs every prompt under every condition. Each condition gets its own
    /// fresh cache. Item failures are recorded and the run continues.
    pub fn run_matrix(
        &self,
        dataset: &[BenchPrompt],
        conditions: &[Condition],
    ) -> Result<BenchReport, BenchError> {
        if dataset.is_empty() || conditions.is_empty() {
            return Err(BenchError::Schema("need at least one prompt and one condition".into()));
        }
        let pipeline = self.pipeline(self.config.clone())?;
        let mut report = BenchReport {
            rows: Vec::new(),
            records: Vec::new(),
        };
        for &condition in conditions {
            let mut cache = RedirectionCache::new(self.cache.clone())?;
            let mut row = ReportRow {
                model: self.model.clone(),
                condition,
                mean_bns_percent: None,
                per_prompt: Vec::new(),
                quality: BTreeMap::new(),
                vlm_calls: 0,
                cache_hits: 0,
                detection_recall: None,
                failures: Vec::new(),
            };
            let mut quality_sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            let (mut expected, mut found) = (0usize, 0usize);
            for item in dataset {
                let prompt = item.prompt()?;
                let seed = item.seed(self.config.seed);
                match pipeline.run_with(&prompt, condition, seed, Some(&mut cache)) {
                    Ok(record) => {
                        if condition.intervenes() {
                            expected += item.expected_biases.len();
                            found += item
                                .expected_biases
                                .iter()
                                .filter(|b| record.bias_set.contains_brand(b))
                                .count();
                        }
                        if let Some(q) = self.quality {
                            match q.score(&record.final_image, &record.generated_text) {
                                Ok(scores) => {
                                    for (k, v) in scores {
                                        let e = quality_sums.entry(k).or_insert((0.0, 0));
                                        e.0 += v;
                                        e.1 += 1;
                                    }
                                }
                                Err(e) => log::warn!("quality scoring failed for {}: {e}", item.id),
                            }
                        }
                        row.vlm_calls += u64::from(record.vlm_calls);
                        row.cache_hits += u64::from(record.cache_hit);
                        row.per_prompt.push(PromptScore {
                            prompt_id: item.id.clone(),
                            bns_initial: record.bns_initial,
                            bns_final: record.bns_final,
                            vlm_calls: record.vlm_calls,
                            cache_hit: record.cache_hit,
                        });
                        report.records.push(record);
                    }
                    Err(e) => {
                        log::warn!("{} / {condition}: {e}", item.id);
                        row.failures.push(ItemFailure::from_pipeline(&item.id, &e));
                    }
                }
            }
            let finals: Vec<f64> = row.per_prompt.iter().map(|p| p.bns_final).collect();
            row.mean_bns_percent = mean_percent(&finals);
            row.quality = quality_sums
                .into_iter()
                .map(|(k, (sum, n))| (k, sum / n as f64))
                .collect();
            if expected > 0 {
                row.detection_recall = Some(found as f64 / expected as f64);
            }
            report.rows.push(row);
        }
        Ok(report)
    }

    /// Full pipeline at each `w`, mean BNS (%) per value.
    pub fn sweep_w(&self, dataset: &[BenchPrompt], w_values: &[f64]) -> Result<Vec<SweepPoint>, BenchError> {
        if w_values.is_empty() {
            return Err(BenchError::Schema("w sweep needs at least one value".into()));
        }
        if let Some(w) = w_values.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(BenchError::Schema(alloc::format!("w = {w} is outside [0, 1]")));
        }
        let mut out = Vec::with_capacity(w_values.len());
        for &w in w_values {
            let mut config = self.config.clone();
            config.refiner.w = w;
            let bench = Bench {
                config,
                model: self.model.clone(),
                cache: self.cache.clone(),
                ..*self
            };
            let report = bench.run_matrix(dataset, &[Condition::CiderFull])?;
            let row = &report.rows[0];
            out.push(SweepPoint {
                w,
                mean_bns_percent: row.mean_bns_percent,
                failures: row.failures.len(),
            });
        }
        Ok(out)
    }

    /// Request order of ablation run `run` (a seeded shuffle of the dataset).
    pub fn shuffled<'d>(&self, dataset: &'d [BenchPrompt], run: usize, seed: u64) -> Vec<&'d BenchPrompt> {
        let mut order: Vec<&BenchPrompt> = dataset.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash64(&[
            b"ablation",
            &seed.to_le_bytes(),
            &(run as u64).to_le_bytes(),
        ]));
        order.shuffle(&mut rng);
        order
    }

    /// Replays `stream` through a fresh full pipeline, returning the
    /// cumulative refinement-VLM calls after each request.
    pub fn replay(&self, stream: &[&BenchPrompt], cache_on: bool) -> Result<Replay, BenchError> {
        let pipeline = self.pipeline(self.config.clone())?;
        let mut cache = if cache_on {
            Some(RedirectionCache::new(self.cache.clone())?)
        } else {
            None
        };
        let mut total = 0u32;
        let mut failures = 0;
        let mut cumulative = Vec::with_capacity(stream.len());
        for item in stream {
            let prompt = item.prompt()?;
            match pipeline.run_with(&prompt, Condition::CiderFull, item.seed(self.config.seed), cache.as_mut()) {
                Ok(r) => total += r.vlm_calls,
                Err(e) => {
                    log::warn!("ablation item {} failed: {e}", item.id);
                    failures += 1;
                }
            }
            cumulative.push(total);
        }
        Ok(Replay {
            cumulative,
            failures,
        })
    }

    /// `runs` shuffled replays with and without the cache, averaged pointwise.
    pub fn cache_ablation(
        &self,
        dataset: &[BenchPrompt],
        runs: usize,
        seed: u64,
    ) -> Result<AblationCurve, BenchError> {
        if runs == 0 {
            return Err(BenchError::Schema("cache ablation needs at least one run".into()));
        }
        if dataset.is_empty() {
            return Err(BenchError::Schema("cache ablation needs a non-empty dataset".into()));
        }
        let mut on = Vec::with_capacity(runs);
        let mut off = Vec::with_capacity(runs);
        for run in 0..runs {
            let stream = self.shuffled(dataset, run, seed);
            on.push(self.replay(&stream, true)?);
            off.push(self.replay(&stream, false)?);
        }
        Ok(average_replays(&on, &off))
    }
}
