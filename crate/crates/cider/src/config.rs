//! TOML configuration with `${VAR}` interpolation.
//!
//! Endpoints may be given in the file (usually as `${CIDER_T2I_URL}` and
//! friends) or only through the environment. A value of `mock://` selects the
//! built-in deterministic mock for that provider.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cider_core::bns::BnsConfig;
use cider_core::cache::CacheConfig;
use cider_core::model::Condition;
use cider_core::refiner::RefinerConfig;

use crate::error::{Error, Result};

pub const MOCK_SCHEME: &str = "mock://";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    T2i,
    Vlm,
    Judge,
    Embed,
    Detector,
    Quality,
}

impl ProviderKind {
    pub const REQUIRED: [ProviderKind; 5] = [
        ProviderKind::T2i,
        ProviderKind::Vlm,
        ProviderKind::Judge,
        ProviderKind::Embed,
        ProviderKind::Detector,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ProviderKind::T2i => "t2i",
            ProviderKind::Vlm => "vlm",
            ProviderKind::Judge => "judge",
            ProviderKind::Embed => "embed",
            ProviderKind::Detector => "detector",
            ProviderKind::Quality => "quality",
        }
    }

    pub fn env_var(self) -> &'static str {
        match self {
            ProviderKind::T2i => "CIDER_T2I_URL",
            ProviderKind::Vlm => "CIDER_VLM_URL",
            ProviderKind::Judge => "CIDER_JUDGE_URL",
            ProviderKind::Embed => "CIDER_EMBED_URL",
            ProviderKind::Detector => "CIDER_DETECTOR_URL",
            ProviderKind::Quality => "CIDER_QUALITY_URL",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub t2i: Option<String>,
    pub vlm: Option<String>,
    pub judge: Option<String>,
    pub embed: Option<String>,
    pub detector: Option<String>,
    pub quality: Option<String>,
}

impl Endpoints {
    fn get(&self, kind: ProviderKind) -> Option<&String> {
        match kind {
            ProviderKind::T2i => self.t2i.as_ref(),
            ProviderKind::Vlm => self.vlm.as_ref(),
            ProviderKind::Judge => self.judge.as_ref(),
            ProviderKind::Embed => self.embed.as_ref(),
            ProviderKind::Detector => self.detector.as_ref(),
            ProviderKind::Quality => self.quality.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    /// Required for a remote embedder; the mock world fixes its own.
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub condition: Option<Condition>,
    pub max_rounds: Option<u32>,
    pub negative_suffix: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub explicit_threshold: f64,
    pub implicit_threshold: Option<f64>,
    /// Display names of brands the logo detector may report.
    pub brands: Vec<String>,
    /// Extra detector label -> brand slug mappings.
    pub labels: BTreeMap<String, String>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            explicit_threshold: 0.5,
            implicit_threshold: None,
            brands: Vec::new(),
            labels: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AestheticsSection {
    pub path: Option<PathBuf>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub out: PathBuf,
    pub timeout_ms: u64,
    pub endpoints: Endpoints,
    pub embedding: EmbeddingSection,
    pub pipeline: PipelineSection,
    pub refiner: RefinerConfig,
    pub detector: DetectorSection,
    pub bns: BnsConfig,
    pub cache: CacheConfig,
    pub aesthetics: AestheticsSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            timeout_ms: 120_000,
            endpoints: Endpoints::default(),
            embedding: EmbeddingSection::default(),
            pipeline: PipelineSection::default(),
            refiner: RefinerConfig::default(),
            detector: DetectorSection::default(),
            bns: BnsConfig::default(),
            cache: CacheConfig::default(),
            aesthetics: AestheticsSection::default(),
        }
    }
}

/// Replaces every `${NAME}` in `s`. `$$` is a literal `$`.
pub fn interpolate(s: &str, lookup: &dyn Fn(&str) -> Option<String>) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('$') {
        out.push_str(&rest[..i]);
        let tail = &rest[i + 1..];
        if let Some(after) = tail.strip_prefix('$') {
            out.push('$');
            rest = after;
        } else if let Some(body) = tail.strip_prefix('{') {
            let end = body.find('}').ok_or_else(|| format!("unterminated `${{` in `{s}`"))?;
            let name = &body[..end];
            if name.is_empty() {
                return Err(format!("empty variable name in `{s}`"));
            }
            out.push_str(&lookup(name).ok_or_else(|| name.to_string())?);
            rest = &body[end + 1..];
        } else {
            out.push('$');
            rest = tail;
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn interpolate_value(
    value: &mut toml::Value,
    path: &str,
    lookup: &dyn Fn(&str) -> Option<String>,
) -> Result<()> {
    match value {
        toml::Value::String(s) => {
            *s = interpolate(s, lookup).map_err(|var| Error::MissingKey {
                key: path.to_string(),
                hint: format!("environment variable {var} is not set"),
            })?;
        }
        toml::Value::Array(items) => {
            for (i, v) in items.iter_mut().enumerate() {
                interpolate_value(v, &format!("{path}[{i}]"), lookup)?;
            }
        }
        toml::Value::Table(t) => {
            for (k, v) in t.iter_mut() {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                interpolate_value(v, &p, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

impl Config {
    pub fn parse(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        interpolate_value(&mut value, "", lookup)?;
        value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Reads `path`, or returns defaults when no file is given.
    pub fn load(path: Option<&Path>, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::parse(&text, lookup)
            }
            None => Ok(Self::default()),
        }
    }

    /// Endpoint from the file, else from the provider's environment variable.
    pub fn endpoint(&self, kind: ProviderKind, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Option<String>> {
        let found = self
            .endpoints
            .get(kind)
            .cloned()
            .or_else(|| lookup(kind.env_var()))
            .filter(|s| !s.trim().is_empty());
        if found.is_none() && kind != ProviderKind::Quality {
            return Err(Error::MissingKey {
                key: format!("endpoints.{}", kind.key()),
                hint: format!("set it in the config file or export {}", kind.env_var()),
            });
        }
        Ok(found)
    }
}

pub fn env_lookup(name: &str) -> Option<String> {
    std::env::var(name).ok()
}
