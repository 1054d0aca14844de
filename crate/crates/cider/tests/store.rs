use std::fs;

use cider::store;
use cider::Error;
use cider_core::aesthetics::AestheticsDatabase;
use cider_core::bench::{Domain, PromptKind};
use cider_core::cache::{CacheConfig, RedirectionCache};
use cider_core::mock::MockStack;
use cider_core::model::{BrandId, Condition, ImageRef, Prompt};
use cider_core::pipeline::{Pipeline, PipelineConfig};

const SAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample.jsonl");

fn sample_db() -> AestheticsDatabase {
    MockStack::sample().db
}

#[test]
fn aesthetics_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/aesthetics.json");
    let db = sample_db().with_threshold(0.7).unwrap();
    assert!(!db.is_empty());
    store::save_aesthetics(&db, &path).unwrap();
    let back = store::load_aesthetics(&path).unwrap();
    assert_eq!(back.embedding_dim(), db.embedding_dim());
    assert_eq!(back.threshold(), 0.7);
    assert_eq!(back.len(), db.len());
    for (a, b) in db.entries().zip(back.entries()) {
        assert_eq!(a, b);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.centroid.values()), bits(b.centroid.values()));
    }
}

#[test]
fn aesthetics_version_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.json");
    store::save_aesthetics(&sample_db(), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();

    fs::write(&path, text.replacen("\"version\": 1", "\"version\": 2", 1)).unwrap();
    match store::load_aesthetics(&path) {
        Err(Error::SchemaVersionMismatch { expected: 1, found: 2, .. }) => {}
        other => panic!("{other:?}"),
    }
    fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(store::load_aesthetics(&path), Err(Error::CorruptFile { .. })));

    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut bad = v.clone();
    bad["entries"][0]["centroid_b64"] = "AAAA".into();
    fs::write(&path, bad.to_string()).unwrap();
    let e = store::load_aesthetics(&path).unwrap_err();
    assert!(matches!(e, Error::CorruptFile { .. }), "{e}");
    assert_eq!(e.exit_code(), 1);

    let missing = store::load_aesthetics(&dir.path().join("none.json")).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));

    fs::write(&path, text).unwrap();
    assert!(matches!(store::load_or_new_aesthetics(&path, 3), Err(Error::Config(_))));
    assert!(store::load_or_new_aesthetics(&dir.path().join("fresh.json"), 3).unwrap().is_empty());
}

#[test]
fn vector_encoding_round_trips() {
    let v = cider_core::embedding::EmbeddingVector::new(vec![0.1, -2.5e-300, 1.0 / 3.0]).unwrap();
    let back = store::decode_vector(&store::encode_vector(&v)).unwrap();
    assert_eq!(v, back);
    assert!(store::decode_vector("AAAAAA==").is_err());
}

fn apple_record() -> (MockStack, RedirectionCache, cider_core::model::RunRecord) {
    let stack = MockStack::sample();
    let config = PipelineConfig {
        detector: stack.detector_config(),
        seed: 5,
        ..PipelineConfig::default()
    };
    let mut cache = RedirectionCache::new(CacheConfig::default()).unwrap();
    let record = {
        let p = Pipeline::new(config, stack.providers(), &stack.db).unwrap();
        p.run(&Prompt::new("a student typing on a laptop in a library").unwrap(), Some(&mut cache))
            .unwrap()
    };
    (stack, cache, record)
}

#[test]
fn cache_file_round_trip_and_damage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.json");
    let (_stack, cache, _) = apple_record();
    assert_eq!(cache.len(), 1);
    store::save_cache(&cache, &path).unwrap();
    let back = store::load_cache(&path, CacheConfig::default()).unwrap();
    assert_eq!(back.snapshot(), cache.snapshot());

    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    v["snapshot"]["entries"][0]["key"] = "nike:explicit".into();
    fs::write(&path, v.to_string()).unwrap();
    let e = store::load_cache(&path, CacheConfig::default()).unwrap_err();
    assert_eq!(e.exit_code(), 3, "{e}");

    fs::write(&path, "{\"version\": 1, \"snapshot\": 4}").unwrap();
    assert!(matches!(store::load_cache(&path, CacheConfig::default()), Err(Error::CorruptFile { .. })));
    let fresh = store::load_or_new_cache(&dir.path().join("new.json"), CacheConfig::default()).unwrap();
    assert!(fresh.is_empty());
}

#[test]
fn run_record_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (_stack, _cache, record) = apple_record();
    let path = store::write_run_record(&record, dir.path()).unwrap();
    let name = path.file_name().unwrap().to_str().unwrap();
    assert!(name.starts_with("run-cider-full-") && name.ends_with(".json"), "{name}");
    assert_eq!(store::read_run_record(&path).unwrap(), record);
    assert_eq!(record.condition, Condition::CiderFull);
    assert_eq!(store::write_run_record(&record, dir.path()).unwrap(), path);
}

#[test]
fn image_bytes_survive_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let (_stack, _cache, mut record) = apple_record();
    record.final_image = ImageRef::from_bytes("raw", vec![0, 255, 7, 128], "x");
    let path = store::write_run_record(&record, dir.path()).unwrap();
    assert_eq!(store::read_run_record(&path).unwrap().final_image.bytes(), Some(&[0, 255, 7, 128][..]));
}

#[test]
fn dataset_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(store::load_dataset(&dir.path().join("missing.jsonl")), Err(Error::Io { .. })));
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "\n\n").unwrap();
    assert!(matches!(store::load_dataset(&empty), Err(Error::Schema(_))));
    let dup = dir.path().join("dup.jsonl");
    let line = r#"{"id":"a","text":"a laptop","domain":"technology","kind":"single_bias","expected_biases":["Apple"]}"#;
    fs::write(&dup, format!("{line}\n{line}\n")).unwrap();
    match store::load_dataset(&dup) {
        Err(Error::DuplicateId(id)) => assert_eq!(id, "a"),
        other => panic!("{other:?}"),
    }
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, r#"{"id":"a","text":"x","domain":"space","kind":"single_bias","expected_biases":[]}"#).unwrap();
    let e = store::load_dataset(&bad).unwrap_err();
    assert!(matches!(e, Error::Schema(_)), "{e}");
    assert_eq!(e.exit_code(), 1);
}

#[test]
fn bundled_sample_parses() {
    let prompts = store::load_dataset(SAMPLE.as_ref()).unwrap();
    assert_eq!(prompts.len(), 20);
    let laptop = prompts.iter().find(|p| p.id == "coffee-shop-laptop").unwrap();
    assert_eq!(laptop.expected_biases, vec![BrandId::from_display("Apple").unwrap()]);
    assert_eq!(laptop.domain, Domain::Technology);
    assert_eq!(laptop.kind, PromptKind::SingleBias);
    assert!(prompts.iter().any(|p| p.kind == PromptKind::Combinatorial));
    assert!(prompts.iter().any(|p| p.expected_biases.is_empty()));

    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("copy.jsonl");
    store::write_dataset(&prompts, &copy).unwrap();
    assert_eq!(store::load_dataset(&copy).unwrap(), prompts);
}
