//! Assembles providers, the aesthetics database and the pipeline settings
//! from a [`Config`].

use std::path::PathBuf;
use std::time::Duration;

use cider_core::aesthetics::AestheticsDatabase;
use cider_core::bench::QualityProvider;
use cider_core::cache::CacheConfig;
use cider_core::detector::DetectorConfig;
use cider_core::embedding::EmbeddingProvider;
use cider_core::mock::MockStack;
use cider_core::model::{BrandId, Condition};
use cider_core::pipeline::{PipelineConfig, Providers, DEFAULT_NEGATIVE_SUFFIX};

use crate::config::{Config, ProviderKind, MOCK_SCHEME};
use crate::error::{Error, Result};
use crate::remote::{
    Endpoint, RemoteEmbedder, RemoteGenerator, RemoteJudge, RemoteLogoDetector, RemoteQuality, RemoteVlm,
};
use crate::store;

pub struct Backends {
    mock: Option<MockStack>,
    t2i: Option<RemoteGenerator>,
    logos: Option<RemoteLogoDetector>,
    embedder: Option<RemoteEmbedder>,
    vlm: Option<RemoteVlm>,
    judge: Option<RemoteJudge>,
    quality: Option<RemoteQuality>,
    pub db: AestheticsDatabase,
    pub pipeline: PipelineConfig,
    pub cache: CacheConfig,
    pub aesthetics_path: Option<PathBuf>,
}

fn is_mock(url: &str) -> bool {
    url.starts_with(MOCK_SCHEME)
}

fn brand(name: &str) -> Result<BrandId> {
    BrandId::from_display(name).map_err(|e| Error::Config(format!("brand `{name}`: {e}")))
}

impl Backends {
    pub fn from_config(config: &Config, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Self> {
        let timeout = Duration::from_millis(config.timeout_ms.max(1));
        let mut urls = Vec::new();
        for kind in ProviderKind::REQUIRED {
            urls.push(config.endpoint(kind, lookup)?.expect("required endpoints are present"));
        }
        let quality_url = config.endpoint(ProviderKind::Quality, lookup)?;
        let mock = if urls.iter().any(|u| is_mock(u)) {
            Some(MockStack::sample())
        } else {
            None
        };
        let remote = |kind: ProviderKind, url: &str| -> Option<Endpoint> {
            (!is_mock(url)).then(|| Endpoint::new(kind.key(), url, timeout))
        };
        let [t2i_url, vlm_url, judge_url, embed_url, detector_url] = &urls[..] else {
            unreachable!("five required providers")
        };

        let embedder = match remote(ProviderKind::Embed, embed_url) {
            Some(ep) => {
                let dim = config.embedding.dim.ok_or_else(|| Error::MissingKey {
                    key: "embedding.dim".into(),
                    hint: "required with a remote embedding endpoint".into(),
                })?;
                if dim < 2 {
                    return Err(Error::Config("embedding.dim must be at least 2".into()));
                }
                Some(RemoteEmbedder::new(ep, dim))
            }
            None => None,
        };

        let mut detector = DetectorConfig {
            explicit_threshold: config.detector.explicit_threshold,
            implicit_threshold: config.detector.implicit_threshold,
            ..DetectorConfig::default()
        };
        if config.detector.brands.is_empty() {
            if let Some(m) = &mock {
                detector = DetectorConfig {
                    explicit_threshold: detector.explicit_threshold,
                    implicit_threshold: detector.implicit_threshold,
                    ..m.detector_config()
                };
            } else {
                log::warn!("detector.brands is empty: every logo label will be dropped as unknown");
            }
        } else {
            let brands = config
                .detector
                .brands
                .iter()
                .map(|b| brand(b))
                .collect::<Result<Vec<_>>>()?;
            detector = detector.with_brands(brands);
        }
        for (label, slug) in &config.detector.labels {
            let b = detector
                .label_to_brand
                .values()
                .find(|b| b.canonical_name() == slug)
                .cloned()
                .map_or_else(|| brand(slug), Ok)?;
            detector.label_to_brand.insert(label.clone(), b);
        }

        let mut backends = Self {
            t2i: remote(ProviderKind::T2i, t2i_url).map(RemoteGenerator::new),
            logos: remote(ProviderKind::Detector, detector_url).map(RemoteLogoDetector::new),
            vlm: remote(ProviderKind::Vlm, vlm_url).map(RemoteVlm::new),
            judge: remote(ProviderKind::Judge, judge_url).map(RemoteJudge::new),
            quality: quality_url
                .filter(|u| !is_mock(u))
                .map(|u| RemoteQuality::new(Endpoint::new("quality", u, timeout))),
            embedder,
            mock,
            db: AestheticsDatabase::new(2),
            pipeline: PipelineConfig {
                condition: config.pipeline.condition.unwrap_or(Condition::CiderFull),
                max_rounds: config.pipeline.max_rounds.unwrap_or(1),
                seed: config.seed,
                negative_suffix: config
                    .pipeline
                    .negative_suffix
                    .clone()
                    .unwrap_or_else(|| DEFAULT_NEGATIVE_SUFFIX.into()),
                detector,
                refiner: config.refiner.clone(),
                bns: config.bns,
            },
            cache: config.cache.clone(),
            aesthetics_path: config.aesthetics.path.clone(),
        };
        backends.pipeline.validate()?;

        let dim = backends.providers().embedder.dim();
        let mut db = match (&backends.aesthetics_path, &backends.embedder, &backends.mock) {
            (Some(path), _, _) => store::load_or_new_aesthetics(path, dim)?,
            (None, None, Some(m)) => m.db.clone(),
            _ => AestheticsDatabase::new(dim),
        };
        if let Some(t) = config.aesthetics.threshold {
            db = db.with_threshold(t)?;
        }
        backends.db = db;
        Ok(backends)
    }

    fn stack(&self) -> &MockStack {
        self.mock.as_ref().expect("mock stack exists whenever a provider is mocked")
    }

    pub fn providers(&self) -> Providers<'_> {
        Providers {
            t2i: match &self.t2i {
                Some(r) => r,
                None => &self.stack().t2i,
            },
            logos: match &self.logos {
                Some(r) => r,
                None => &self.stack().logos,
            },
            embedder: match &self.embedder {
                Some(r) => r,
                None => &self.stack().embedder,
            },
            vlm: match &self.vlm {
                Some(r) => r,
                None => &self.stack().vlm,
            },
            judge: match &self.judge {
                Some(r) => r,
                None => &self.stack().judge,
            },
        }
    }

    pub fn quality(&self) -> Option<&dyn QualityProvider> {
        self.quality.as_ref().map(|q| q as &dyn QualityProvider)
    }

    pub fn embedder(&self) -> &dyn EmbeddingProvider {
        self.providers().embedder
    }
}
