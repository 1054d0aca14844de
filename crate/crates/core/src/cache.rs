//! Redirection cache: bias set -> previously selected mediator, so repeated
//! biases skip the VLM.
//!
//! Lookups try the exact canonical key first. With `allow_superset_cover`,
//! an entry whose bias set strictly contains the query also answers it; the
//! smallest such entry wins (most recently used on ties) and its mediator is
//! filtered down to modifiers whose source brand was queried. Eviction is LRU
//! on a logical clock that advances on every insert and hit.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BiasSet, MediatorSet, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub capacity: usize,
    pub allow_superset_cover: bool,
    pub persistence_path: Option<String>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            capacity: 1024,
            allow_superset_cover: true,
            persistence_path: None,
        }
    }
}

impl CacheConfig {
    pub fn exact_only(capacity: usize) -> Self {
        Self {
            capacity,
            allow_superset_cover: false,
            persistence_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub bias_records: BiasSet,
    pub mediator: MediatorSet,
    /// Logical clock ticks.
    pub created_at: u64,
    pub last_used: u64,
    pub hits: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: usize,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub inserts: u64,
    pub vlm_calls_saved: u64,
}

/// Serializable state of a cache; the std crate wraps it in a versioned file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSnapshot {
    pub clock: u64,
    pub stats: CacheStats,
    pub entries: Vec<CacheEntry>,
}

#[derive(Debug, Clone)]
pub struct RedirectionCache {
    config: CacheConfig,
    entries: BTreeMap<String, CacheEntry>,
    clock: u64,
    stats: CacheStats,
}

impl RedirectionCache {
    pub fn new(config: CacheConfig) -> Result<Self> {
        if config.capacity == 0 {
            return Err(Error::invalid("cache capacity must be at least 1"));
        }
        Ok(Self {
            config,
            entries: BTreeMap::new(),
            clock: 0,
            stats: CacheStats::default(),
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.values()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            entries: self.entries.len(),
            ..self.stats
        }
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn lookup(&mut self, biases: &BiasSet) -> Result<Option<MediatorSet>> {
        if biases.is_empty() {
            return Err(Error::invalid("cache lookup needs a non-empty bias set"));
        }
        let key = biases.key();
        let found = if self.entries.contains_key(&key) {
            Some((key, None))
        } else if self.config.allow_superset_cover {
            self.best_cover(biases).map(|(k, m)| (k, Some(m)))
        } else {
            None
        };
        match found {
            Some((key, filtered)) => {
                let now = self.tick();
                let entry = self.entries.get_mut(&key).expect("key found above");
                entry.hits += 1;
                entry.last_used = now;
                self.stats.hits += 1;
                self.stats.vlm_calls_saved += 1;
                let mediator = filtered.unwrap_or_else(|| entry.mediator.clone());
                Ok(Some(mediator.with_provenance(Provenance::CacheHit)))
            }
            None => {
                self.stats.misses += 1;
                Ok(None)
            }
        }
    }

    fn best_cover(&self, biases: &BiasSet) -> Option<(String, MediatorSet)> {
        let mut best: Option<(&CacheEntry, MediatorSet)> = None;
        for e in self.entries.values() {
            if e.bias_records.len() <= biases.len() || !biases.is_subset_of(&e.bias_records) {
                continue;
            }
            let filtered = e.mediator.restricted_to(biases);
            if filtered.is_empty() {
                continue;
            }
            let better = match &best {
                None => true,
                Some((b, _)) => {
                    (e.bias_records.len(), core::cmp::Reverse(e.last_used))
                        < (b.bias_records.len(), core::cmp::Reverse(b.last_used))
                }
            };
            if better {
                best = Some((e, filtered));
            }
        }
        best.map(|(e, m)| (e.key.clone(), m))
    }

    /// Upserts the mediator under the canonical key of `biases`, evicting the
    /// least recently used entry when over capacity.
    pub fn insert(&mut self, biases: &BiasSet, mediator: &MediatorSet) -> Result<()> {
        if biases.is_empty() {
            return Err(Error::invalid("cache insert needs a non-empty bias set"));
        }
        if let Some(m) = mediator
            .modifiers()
            .iter()
            .find(|m| !biases.contains_brand(&m.source_bias))
        {
            return Err(Error::SourceBiasMismatch(m.source_bias.clone()));
        }
        let now = self.tick();
        let key = biases.key();
        let mediator = mediator.clone().with_provenance(Provenance::FreshVlm);
        self.stats.inserts += 1;
        match self.entries.get_mut(&key) {
            Some(e) => {
                e.bias_records = biases.clone();
                e.mediator = mediator;
                e.last_used = now;
            }
            None => {
                self.entries.insert(
                    key.clone(),
                    CacheEntry {
                        key,
                        bias_records: biases.clone(),
                        mediator,
                        created_at: now,
                        last_used: now,
                        hits: 0,
                    },
                );
                self.evict_to_capacity();
            }
        }
        Ok(())
    }

    fn evict_to_capacity(&mut self) {
        while self.entries.len() > self.config.capacity {
            let victim = self
                .entries
                .values()
                .min_by(|a, b| a.last_used.cmp(&b.last_used).then_with(|| a.key.cmp(&b.key)))
                .map(|e| e.key.clone())
                .expect("non-empty");
            self.entries.remove(&victim);
            self.stats.evictions += 1;
        }
    }

    /// Drops all entries; counters are kept.
    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn snapshot(&self) -> CacheSnapshot {
        CacheSnapshot {
            clock: self.clock,
            stats: self.stats(),
            entries: self.entries.values().cloned().collect(),
        }
    }

    pub fn restore(config: CacheConfig, snapshot: CacheSnapshot) -> Result<Self> {
        let mut cache = Self::new(config)?;
        for e in snapshot.entries {
            if e.key != e.bias_records.key() {
                return Err(Error::Invariant(alloc::format!(
                    "cache entry key `{}` does not match its bias set",
                    e.key
                )));
            }
            if e.last_used > snapshot.clock || e.created_at > e.last_used {
                return Err(Error::Invariant("cache entry timestamps are inconsistent".into()));
            }
            cache.entries.insert(e.key.clone(), e);
        }
        cache.clock = snapshot.clock;
        cache.stats = snapshot.stats;
        cache.evict_to_capacity();
        cache.stats.entries = cache.entries.len();
        Ok(cache)
    }
}
