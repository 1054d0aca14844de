//! Versioned JSON files: aesthetics database, cache snapshots, run records
//! and prompt datasets. Writes go through a temporary file and a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cider_core::aesthetics::{AestheticsDatabase, StyleEntry};
use cider_core::bench::{parse_dataset, BenchPrompt};
use cider_core::cache::{CacheConfig, CacheSnapshot, RedirectionCache};
use cider_core::embedding::{stable_hash64, EmbeddingVector};
use cider_core::model::{BrandId, RunRecord};

use crate::error::{Error, Result};

pub const AESTHETICS_VERSION: u32 = 1;
pub const CACHE_VERSION: u32 = 1;
pub const RUN_RECORD_VERSION: u32 = 1;

/// Writes `bytes` next to `path` and renames over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn corrupt(path: &Path, reason: impl ToString) -> Error {
    Error::CorruptFile {
        path: path.into(),
        reason: reason.to_string(),
    }
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

/// Parses a `{"version": N, ...}` document after checking `N`.
fn read_versioned<T: DeserializeOwned>(path: &Path, expected: u32) -> Result<T> {
    let text = read(path)?;
    let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| corrupt(path, e))?;
    if probe.version != expected {
        return Err(Error::SchemaVersionMismatch {
            path: path.into(),
            expected,
            found: probe.version,
        });
    }
    serde_json::from_str(&text).map_err(|e| corrupt(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("in-memory documents serialize");
    bytes.push(b'\n');
    bytes
}

/// Little-endian `f64` bytes, base64 encoded; round-trips bit for bit.
pub fn encode_vector(v: &EmbeddingVector) -> String {
    let bytes: Vec<u8> = v.values().iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_vector(s: &str) -> std::result::Result<EmbeddingVector, String> {
    let bytes = STANDARD.decode(s).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!("{} bytes is not a whole number of f64 values", bytes.len()));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    EmbeddingVector::new(values).map_err(|e| e.to_string())
}

#[derive(Serialize, Deserialize)]
struct AestheticsFile {
    version: u32,
    dim: usize,
    threshold: f64,
    entries: Vec<StyleRow>,
}

#[derive(Serialize, Deserialize)]
struct StyleRow {
    style_id: String,
    brand: String,
    display_name: String,
    description: String,
    exemplar_count: u32,
    centroid_b64: String,
}

pub fn save_aesthetics(db: &AestheticsDatabase, path: &Path) -> Result<()> {
    let file = AestheticsFile {
        version: AESTHETICS_VERSION,
        dim: db.embedding_dim(),
        threshold: db.threshold(),
        entries: db
            .entries()
            .map(|e| StyleRow {
                style_id: e.style_id.clone(),
                brand: e.brand.canonical_name().into(),
                display_name: e.brand.display_name().into(),
                description: e.description.clone(),
                exemplar_count: e.exemplar_count,
                centroid_b64: encode_vector(&e.centroid),
            })
            .collect(),
    };
    write_atomic(path, &to_json(&file))
}

pub fn load_aesthetics(path: &Path) -> Result<AestheticsDatabase> {
    let file: AestheticsFile = read_versioned(path, AESTHETICS_VERSION)?;
    let mut db = AestheticsDatabase::new(file.dim)
        .with_threshold(file.threshold)
        .map_err(|e| corrupt(path, e))?;
    for row in file.entries {
        let centroid = decode_vector(&row.centroid_b64)
            .map_err(|e| corrupt(path, format!("style `{}`: {e}", row.style_id)))?;
        let brand = BrandId::new(row.brand, row.display_name).map_err(|e| corrupt(path, e))?;
        db.insert_entry(StyleEntry {
            style_id: row.style_id,
            brand,
            description: row.description,
            centroid,
            exemplar_count: row.exemplar_count,
        })
        .map_err(|e| corrupt(path, e))?;
    }
    Ok(db)
}

/// The database at `path`, or an empty one of dimension `dim` if the file does not exist.
pub fn load_or_new_aesthetics(path: &Path, dim: usize) -> Result<AestheticsDatabase> {
    if path.exists() {
        let db = load_aesthetics(path)?;
        if db.embedding_dim() != dim {
            return Err(Error::Config(format!(
                "{} holds {}-dimensional styles but the embedder produces {dim}",
                path.display(),
                db.embedding_dim()
            )));
        }
        Ok(db)
    } else {
        Ok(AestheticsDatabase::new(dim))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    version: u32,
    snapshot: CacheSnapshot,
}

pub fn save_cache(cache: &RedirectionCache, path: &Path) -> Result<()> {
    write_atomic(
        path,
        &to_json(&CacheFile {
            version: CACHE_VERSION,
            snapshot: cache.snapshot(),
        }),
    )
}

/// Restores a cache file. Structural damage is `CorruptFile`; a snapshot
/// that parses but breaks cache invariants is reported as such.
pub fn load_cache(path: &Path, config: CacheConfig) -> Result<RedirectionCache> {
    let file: CacheFile = read_versioned(path, CACHE_VERSION)?;
    Ok(RedirectionCache::restore(config, file.snapshot)?)
}

pub fn load_or_new_cache(path: &Path, config: CacheConfig) -> Result<RedirectionCache> {
    if path.exists() {
        load_cache(path, config)
    } else {
        Ok(RedirectionCache::new(config)?)
    }
}

#[derive(Serialize, Deserialize)]
pub struct RunRecordFile {
    pub version: u32,
    pub record: RunRecord,
}

/// Writes one run as `run-<hash>.json` in `dir` and returns the path.
pub fn write_run_record(record: &RunRecord, dir: &Path) -> Result<PathBuf> {
    let name = format!(
        "run-{}-{:016x}.json",
        record.condition.as_str(),
        stable_hash64(&[
            record.prompt.text().as_bytes(),
            &record.seed.to_le_bytes(),
            record.final_image.id.as_bytes(),
        ])
    );
    let path = dir.join(name);
    write_atomic(
        &path,
        &to_json(&RunRecordFile {
            version: RUN_RECORD_VERSION,
            record: record.clone(),
        }),
    )?;
    Ok(path)
}

pub fn read_run_record(path: &Path) -> Result<RunRecord> {
    read_versioned::<RunRecordFile>(path, RUN_RECORD_VERSION).map(|f| f.record)
}

/// JSON-lines prompt dataset.
pub fn load_dataset(path: &Path) -> Result<Vec<BenchPrompt>> {
    let text = read(path)?;
    Ok(parse_dataset(&text)?)
}

pub fn write_dataset(prompts: &[BenchPrompt], path: &Path) -> Result<()> {
    let mut out = String::new();
    for p in prompts {
        out.push_str(&serde_json::to_string(p).expect("prompts serialize"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
