mod common;

use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use cider::remote::{Endpoint, RemoteEmbedder, RemoteGenerator, RemoteJudge, RemoteLogoDetector, RemoteQuality, RemoteVlm};
use cider_core::bench::QualityProvider;
use cider_core::bns::JudgeProvider;
use cider_core::detector::LogoDetector;
use cider_core::embedding::EmbeddingProvider;
use cider_core::model::{BiasKind, ImageRef};
use cider_core::pipeline::ImageGenerator;
use cider_core::refiner::{VlmBias, VlmProvider, VlmRequest};
use cider_core::Error;
use common::{dead_url, ok, stub};
use serde_json::json;

fn ep(name: &'static str, url: &str) -> Endpoint {
    Endpoint::new(name, url, Duration::from_secs(5))
}

fn image() -> ImageRef {
    ImageRef::from_bytes("img-1", vec![0x89, 0x50, 0x4e, 0x47], "p")
}

#[test]
fn embedder_contract() {
    let s = stub(vec![ok(r#"{"embedding":[0.6,0.8,0.0],"dim":3}"#)]);
    let e = RemoteEmbedder::new(ep("embedding", &s.url), 3);
    let v = e.embed_text("laptop").unwrap();
    assert_eq!(v.values(), &[0.6, 0.8, 0.0]);
    e.embed_image(&image()).unwrap();
    let bodies = s.bodies.lock().unwrap();
    assert_eq!(bodies[0], json!({"kind": "text", "payload": "laptop"}));
    assert_eq!(bodies[1]["kind"], "image");
    assert_eq!(bodies[1]["payload"], STANDARD.encode([0x89, 0x50, 0x4e, 0x47]));
}

#[test]
fn embedder_rejects_wrong_dimension() {
    let s = stub(vec![ok(r#"{"embedding":[1.0,0.0],"dim":2}"#)]);
    let e = RemoteEmbedder::new(ep("embedding", &s.url), 3);
    assert_eq!(e.embed_text("x"), Err(Error::DimensionMismatch { expected: 3, actual: 2 }));
    let s = stub(vec![ok(r#"{"embedding":[1.0,0.0],"dim":5}"#)]);
    let e = RemoteEmbedder::new(ep("embedding", &s.url), 2);
    assert!(e.embed_text("x").unwrap_err().is_provider_failure());
}

#[test]
fn non_200_and_unreachable_are_unavailable() {
    let s = stub(vec![(503, "busy".into())]);
    let e = RemoteEmbedder::new(ep("embedding", &s.url), 3);
    match e.embed_text("x") {
        Err(Error::ProviderUnavailable { provider, reason }) => {
            assert_eq!(provider, "embedding");
            assert!(reason.contains("503"), "{reason}");
        }
        other => panic!("{other:?}"),
    }
    let j = RemoteJudge::new(ep("judge", &dead_url()));
    assert!(matches!(j.judge(&image()), Err(Error::ProviderUnavailable { provider: "judge", .. })));
    let s = stub(vec![ok("not json")]);
    let d = RemoteLogoDetector::new(ep("detector", &s.url));
    assert!(matches!(d.detect(&image()), Err(Error::ProviderUnavailable { .. })));
}

#[test]
fn detector_contract() {
    let s = stub(vec![ok(r#"{"detections":[{"label":"Apple","confidence":0.93,"box":[10,20,30,40]}]}"#)]);
    let d = RemoteLogoDetector::new(ep("detector", &s.url));
    let dets = d.detect(&image()).unwrap();
    assert_eq!(dets.len(), 1);
    assert_eq!(dets[0].label, "Apple");
    assert_eq!((dets[0].bbox.x, dets[0].bbox.h), (10.0, 40.0));
    assert!(s.bodies.lock().unwrap()[0]["image_b64"].is_string());

    let s = stub(vec![ok(r#"{"detections":[{"label":"Apple","confidence":0.93,"box":[0,0,0,5]}]}"#)]);
    let d = RemoteLogoDetector::new(ep("detector", &s.url));
    assert!(d.detect(&image()).unwrap_err().is_provider_failure());
}

#[test]
fn vlm_sends_the_request_and_returns_raw_text() {
    let reply = "```json\n{\"core_subject\":\"laptop\",\"biases\":[]}\n```";
    let s = stub(vec![ok(reply)]);
    let v = RemoteVlm::new(ep("vlm", &s.url));
    let req = VlmRequest {
        system: "persona".into(),
        image: image(),
        biases: vec![VlmBias { brand: "apple".into(), display_name: "Apple".into(), kind: BiasKind::Explicit }],
        prompt: "a laptop".into(),
        retry_feedback: Some("reply with JSON".into()),
    };
    assert_eq!(v.complete(&req).unwrap(), reply);
    let body = &s.bodies.lock().unwrap()[0];
    assert_eq!(body["system"], "persona");
    assert_eq!(body["prompt"], "a laptop");
    assert_eq!(body["biases"][0]["brand"], "apple");
    assert_eq!(body["biases"][0]["kind"], "explicit");
    assert_eq!(body["retry_feedback"], "reply with JSON");
}

#[test]
fn generator_contract() {
    let png = STANDARD.encode(b"pixels");
    let s = stub(vec![ok(&format!(r#"{{"image_b64":"{png}","id":"gen-7"}}"#)), ok(&format!(r#"{{"image_b64":"{png}"}}"#))]);
    let g = RemoteGenerator::new(ep("t2i", &s.url));
    let img = g.generate("a laptop", 42).unwrap();
    assert_eq!(img.id, "gen-7");
    assert_eq!(img.bytes(), Some(&b"pixels"[..]));
    assert_eq!(img.source_prompt, "a laptop");
    let again = g.generate("a laptop", 42).unwrap();
    assert!(again.id.starts_with("img-"));
    let body = &s.bodies.lock().unwrap()[0];
    assert_eq!(body["seed"], 42);
    assert_eq!(body["prompt"], "a laptop");
    assert!(body["negative"].is_null());
}

#[test]
fn judge_and_quality_contracts() {
    let s = stub(vec![ok(r#"{"findings":[{"brand":"Nike","confidence":0.8}]}"#)]);
    let j = RemoteJudge::new(ep("judge", &s.url));
    assert!(j.judge(&image()).unwrap().contains("Nike"));
    let s = stub(vec![ok(r#"{"scores":{"aesthetics":6.1,"pickscore":21.5}}"#)]);
    let q = RemoteQuality::new(ep("quality", &s.url));
    let scores = q.score(&image(), "a laptop").unwrap();
    assert_eq!(scores["aesthetics"], 6.1);
    assert_eq!(s.bodies.lock().unwrap()[0]["prompt"], "a laptop");
}
