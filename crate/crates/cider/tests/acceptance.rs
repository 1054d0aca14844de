//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line with its wall time against the allowed budget.
//!
//! Run with `cargo test -p cider --test acceptance -- --nocapture`.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config as RunnerConfig, TestRng, TestRunner};

use cider::backend::Backends;
use cider::config::Config;
use cider::{ablation, store};
use cider_core::aesthetics::AestheticsDatabase;
use cider_core::bench::{Bench, BenchPrompt, Domain, PromptKind};
use cider_core::bns::{bns, BnsConfig};
use cider_core::cache::CacheConfig;
use cider_core::embedding::{cosine, EmbeddingProvider, EmbeddingVector};
use cider_core::mock::{FlakyGenerator, MockStack, PinnedEmbedder, ScriptedVlm};
use cider_core::model::{BrandId, Condition, ImageRef, Prompt};
use cider_core::pipeline::{Pipeline, PipelineConfig, Providers, Stage};
use cider_core::refiner::{
    score_candidate, score_from_cosines, BiasDeconstruction, CandidateModifier, DeconstructionResponse,
    FeatureAlternatives, FeatureRecord, Refiner, RefinerConfig,
};
use cider_core::Error;

const MOCK_CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/config/mock.toml");
const SAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample.jsonl");
const CASES: usize = 10_000;

/// Runs `check`, prints the verdict line and fails the test on violation or overrun.
fn criterion(n: u32, budget_secs: u64, check: impl FnOnce() -> Result<(), String>) {
    let start = Instant::now();
    let outcome = check();
    let took = start.elapsed();
    let over = took > Duration::from_secs(budget_secs);
    let verdict = if outcome.is_ok() && !over { "PASS" } else { "FAIL" };
    println!("criterion {n}: {verdict} ({:.2}s, limit {budget_secs}s)", took.as_secs_f64());
    if let Err(msg) = outcome {
        panic!("criterion {n}: {msg}");
    }
    assert!(!over, "criterion {n}: took {took:?}, limit {budget_secs}s");
}

/// Draws `cases` values and returns the ones `holds` rejects.
fn violations<S: Strategy>(strategy: S, cases: usize, mut holds: impl FnMut(&S::Value) -> bool) -> Vec<S::Value> {
    let mut runner = TestRunner::new_with_rng(RunnerConfig::default(), TestRng::deterministic_rng(RunnerConfig::default().rng_algorithm));
    (0..cases)
        .map(|_| strategy.new_tree(&mut runner).expect("strategy draws").current())
        .filter(|v| !holds(v))
        .collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_neutrality_score() {
    criterion(1, 5, || {
        let cfg = BnsConfig::default();
        let b = |s: &[f64]| bns(s, &cfg).map_err(|e| e.to_string());
        ensure(b(&[])? == 1.0, || "no findings must score 1".into())?;
        ensure(close(b(&[0.9, 0.5])?, (-1.0125f64).exp(), 1e-9), || "two findings".into())?;
        ensure(close(b(&[0.5, 0.9])?, (-1.0125f64).exp(), 1e-9), || "unsorted input".into())?;
        ensure(close(b(&[1.0])?, (-0.75f64).exp(), 1e-12), || "single finding".into())?;
        let ones = b(&[1.0; 4])?;
        ensure(close(ones, (-0.75 * (1.0 - 0.9f64.powi(4)) / 0.1).exp(), 1e-12), || "geometric series".into())?;
        ensure(b(&[1.5]).is_err() && b(&[-0.1]).is_err(), || "out-of-range scores accepted".into())?;

        let scores = prop::collection::vec(0.0f64..=1.0, 0..12);
        let range = violations(scores.clone(), CASES, |s| {
            let v = bns(s, &cfg).unwrap();
            v > 0.0 && v <= 1.0
        });
        ensure(range.is_empty(), || format!("{} range violations, e.g. {:?}", range.len(), range[0]))?;

        let perm = violations((scores.clone(), any::<u64>()), CASES, |(s, k)| {
            let mut shuffled = s.clone();
            if !shuffled.is_empty() {
                let n = shuffled.len();
                shuffled.rotate_left((*k as usize) % n);
                shuffled.swap(0, (*k as usize / 7) % n);
            }
            bns(s, &cfg).unwrap() == bns(&shuffled, &cfg).unwrap()
        });
        ensure(perm.is_empty(), || format!("{} permutation violations", perm.len()))?;

        let grow = (prop::collection::vec(0.0f64..=1.0, 1..12), any::<prop::sample::Index>(), 0.0f64..=1.0);
        let mono = violations(grow, CASES, |(s, idx, target)| {
            let i = idx.index(s.len());
            let mut raised = s.clone();
            raised[i] = raised[i].max(*target);
            let mut longer = s.clone();
            longer.push(*target);
            let base = bns(s, &cfg).unwrap();
            bns(&raised, &cfg).unwrap() <= base && bns(&longer, &cfg).unwrap() <= base
        });
        ensure(mono.is_empty(), || format!("{} monotonicity violations, e.g. {:?}", mono.len(), mono[0]))
    });
}

// ---------------------------------------------------------------- 2

fn unit(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

#[test]
fn criterion_2_candidate_score() {
    criterion(2, 5, || {
        let triples = (unit(6), unit(6), unit(6));
        let mut worst_affine = 0.0f64;
        let bad = violations(triples, CASES, |(a, f, r)| {
            let emb = PinnedEmbedder::new(6)
                .with("a", a.clone())
                .and_then(|e| e.with("f", f.clone()))
                .and_then(|e| e.with("r", r.clone()))
                .unwrap();
            let s = |w: f64| score_candidate(&emb, "a", "f", "r", w).unwrap();
            let (s0, s1) = (s(0.0), s(1.0));
            let va = EmbeddingVector::new(a.clone()).unwrap();
            let cf = cosine(&va, &EmbeddingVector::new(f.clone()).unwrap()).unwrap();
            let cr = cosine(&va, &EmbeddingVector::new(r.clone()).unwrap()).unwrap();
            let endpoints = close(s1, 1.0 - cf, 1e-12) && close(s0, cr, 1e-12);
            let affine = [0.0, 0.25, 0.4, 0.75, 1.0].iter().all(|&w| {
                let err = (s(w) - (s0 + w * (s1 - s0))).abs();
                worst_affine = worst_affine.max(err);
                err <= 1e-12
            });
            let bounded = [0.0, 0.4, 1.0].iter().all(|&w| (-1.0..=2.0).contains(&s(w)));
            endpoints && affine && bounded
        });
        ensure(bad.is_empty(), || format!("{} score violations (worst affine error {worst_affine:e})", bad.len()))?;
        ensure(score_from_cosines(1.0, 1.0, 0.4) == 0.6, || "closed form".into())?;

        // the winning candidate does not depend on embedding norms
        let stack = MockStack::sample();
        let profile = stack.world.profile("apple").unwrap().clone();
        let mut pinned = PinnedEmbedder::new(stack.world.dim());
        for text in profile.alternatives().iter().chain([&profile.feature, &profile.subject]) {
            pinned.pin(text, stack.world.text_embedding(text).unwrap()).unwrap();
        }
        let response = response_for(&profile.subject, &[(&profile.feature, profile.alternatives().to_vec())]);
        let pick = |emb: &PinnedEmbedder| {
            let vlm = ScriptedVlm::new(Vec::<String>::new());
            let r = Refiner::new(RefinerConfig::default(), &vlm, emb).unwrap();
            r.select_modifiers(&response).unwrap().texts().iter().map(|s| s.to_string()).collect::<Vec<_>>()
        };
        let base = pick(&pinned);
        ensure(base == vec![profile.neutral_alternative()], || format!("unexpected pick {base:?}"))?;
        for factor in [0.001, 0.5, 3.0, 1e6] {
            let scaled = pick(&pinned.scaled(factor).map_err(|e| e.to_string())?);
            ensure(scaled == base, || format!("scaling by {factor} changed the pick to {scaled:?}"))?;
        }
        Ok(())
    });
}

// ---------------------------------------------------------------- 3

fn response_for(subject: &str, features: &[(&str, Vec<String>)]) -> DeconstructionResponse {
    let brand = BrandId::from_display("Acme").unwrap();
    DeconstructionResponse {
        core_subject: subject.into(),
        biases: vec![BiasDeconstruction {
            bias: brand.clone(),
            features: features
                .iter()
                .enumerate()
                .map(|(i, (desc, cands))| FeatureAlternatives {
                    feature: FeatureRecord {
                        feature_id: format!("feature-{i}"),
                        bias: brand.clone(),
                        description: desc.to_string(),
                    },
                    candidates: cands
                        .iter()
                        .map(|t| CandidateModifier { text: t.clone(), feature: desc.to_string(), score: None })
                        .collect(),
                })
                .collect(),
        }],
    }
}

fn plain_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// A selection problem: feature and subject vectors, then candidates as
/// (vector, copy-of) where `copy-of` duplicates an earlier candidate's
/// direction at a power-of-two scale to force exact ties.
type Instance = (Vec<f64>, Vec<f64>, Vec<(Vec<f64>, Option<prop::sample::Index>)>, f64, Vec<u8>);

fn instance() -> impl Strategy<Value = Instance> {
    (
        unit(8),
        unit(8),
        prop::collection::vec((unit(8), prop::option::weighted(0.3, any::<prop::sample::Index>())), 1..=20),
        prop::sample::select(vec![0.0, 0.1, 0.25, 0.4, 0.5, 0.75, 1.0]),
        prop::collection::vec(any::<u8>(), 20),
    )
}

#[test]
fn criterion_3_selection_matches_brute_force() {
    criterion(3, 10, || {
        let mut ties = 0;
        let bad = violations(instance(), 500, |(f, subject, cands, w, names)| {
            let mut vectors: Vec<Vec<f64>> = Vec::new();
            for (i, (v, copy)) in cands.iter().enumerate() {
                match copy {
                    Some(idx) if i > 0 => {
                        let src = &vectors[idx.index(i)];
                        vectors.push(src.iter().map(|x| x * 2.0).collect());
                    }
                    _ => vectors.push(v.clone()),
                }
            }
            // shuffled, unique names so the text tie-break is not the listing order
            let texts: Vec<String> = (0..vectors.len()).map(|i| format!("cand-{:03}-{i}", names[i])).collect();
            let mut emb = PinnedEmbedder::new(8).with("feature", f.clone()).unwrap().with("subject", subject.clone()).unwrap();
            for (t, v) in texts.iter().zip(&vectors) {
                emb.pin(t, EmbeddingVector::new(v.clone()).unwrap()).unwrap();
            }

            let scores: Vec<f64> = vectors
                .iter()
                .map(|a| w * (1.0 - plain_cosine(a, f)) + (1.0 - w) * plain_cosine(a, subject))
                .collect();
            // the winner is the candidate nothing beats
            let beaten_by = |i: usize| {
                (0..scores.len())
                    .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && texts[j] < texts[i]))
                    .count()
            };
            let expected: Vec<&String> = (0..scores.len()).filter(|&i| beaten_by(i) == 0).map(|i| &texts[i]).collect();
            if scores.iter().filter(|&&s| s == scores.iter().cloned().fold(f64::MIN, f64::max)).count() > 1 {
                ties += 1;
            }

            let vlm = ScriptedVlm::new(Vec::<String>::new());
            let config = RefinerConfig { w: *w, ..RefinerConfig::default() };
            let refiner = Refiner::new(config, &vlm, &emb).unwrap();
            let got = refiner.select_modifiers(&response_for("subject", &[("feature", texts.clone())])).unwrap();
            got.texts() == expected.iter().map(|s| s.as_str()).collect::<Vec<_>>()
        });
        ensure(bad.is_empty(), || format!("{} of 500 selections disagree with the oracle", bad.len()))?;
        ensure(ties > 0, || "no instance exercised a tie".into())
    });
}

// ---------------------------------------------------------------- 4

const TRIGGERS: [&str; 12] = [
    "laptop",
    "smartphone",
    "sneakers",
    "tracksuit",
    "coffee cup",
    "soda",
    "fast food",
    "flame-grilled",
    "supercar",
    "wedge-shaped",
    "digital camera",
    "dslr",
];
const SCENES: [&str; 5] = [
    "on a wooden desk near a window",
    "photographed at golden hour",
    "in a quiet studio with soft light",
    "seen from a low angle outdoors",
    "beside a potted plant in a bright room",
];

fn stream_of_200() -> Vec<BenchPrompt> {
    (0..200)
        .map(|i| {
            let t = TRIGGERS[i % 12];
            let scene = SCENES[(i / 12) % SCENES.len()];
            BenchPrompt {
                id: format!("req-{i:03}"),
                text: format!("a {t} {scene}, take {}", i / 60),
                domain: Domain::Technology,
                kind: PromptKind::SingleBias,
                expected_biases: Vec::new(),
                synthetic: true,
            }
        })
        .collect()
}

#[test]
fn criterion_4_cache_ablation() {
    criterion(4, 30, || {
        let stack = MockStack::sample();
        let config = PipelineConfig { detector: stack.detector_config(), seed: 3, ..PipelineConfig::default() };
        let mut bench = Bench::new(stack.providers(), &stack.db, config);
        bench.cache = CacheConfig::exact_only(64);
        let data = stream_of_200();

        let curve = ablation::cache_ablation(&bench, &data, 20, 17).map_err(|e| e.to_string())?;
        ensure(curve.runs == 20 && curve.cache_on.len() == 200, || "curve shape".into())?;
        ensure(curve.failures == 0, || format!("{} failures", curve.failures))?;
        ensure(curve.final_on.iter().all(|&c| c == 12), || format!("cache on: {:?}", curve.final_on))?;
        ensure(curve.final_off.iter().all(|&c| c == 200), || format!("cache off: {:?}", curve.final_off))?;

        for run in 0..20 {
            let stream = bench.shuffled(&data, run, 17);
            let on = bench.replay(&stream, true).map_err(|e| e.to_string())?.cumulative;
            ensure(on.windows(2).all(|w| w[0] <= w[1]), || format!("run {run} decreases"))?;
            let mut seen = std::collections::BTreeSet::new();
            let warm = stream
                .iter()
                .position(|p| {
                    seen.insert(TRIGGERS.iter().position(|t| p.text.starts_with(&format!("a {t} "))).unwrap());
                    seen.len() == 12
                })
                .unwrap();
            ensure(on[warm] == 12 && on[warm..].iter().all(|&c| c == 12), || {
                format!("run {run} not flat after request {warm}: {:?}", &on[warm..warm + 3])
            })?;
        }
        Ok(())
    });
}

// ---------------------------------------------------------------- 5

fn mock_backends() -> Backends {
    let config = Config::load(Some(Path::new(MOCK_CONFIG)), &|_| None).unwrap();
    Backends::from_config(&config, &|_| None).unwrap()
}

#[test]
fn criterion_5_condition_ordering() {
    criterion(5, 30, || {
        let b = mock_backends();
        let data = store::load_dataset(Path::new(SAMPLE)).map_err(|e| e.to_string())?;
        let mut bench = Bench::new(b.providers(), &b.db, b.pipeline.clone());
        bench.cache = b.cache.clone();
        let report = bench.run_matrix(&data, &Condition::ALL).map_err(|e| e.to_string())?;
        let mean = |c| report.row(c).and_then(|r| r.mean_bns_percent).unwrap();
        let (base, neg, direct, full) = (
            mean(Condition::Baseline),
            mean(Condition::NegativePrompt),
            mean(Condition::CiderNoScoring),
            mean(Condition::CiderFull),
        );
        println!("  mean BNS %: baseline {base:.2}, negative {neg:.2}, no-scoring {direct:.2}, full {full:.2}");
        ensure(full > direct && direct > neg && neg > base, || "ordering violated".into())?;
        ensure(report.rows.iter().all(|r| r.failures.is_empty()), || "unexpected failures".into())?;

        let clean = data.iter().find(|p| p.expected_biases.is_empty()).unwrap();
        let pipeline = Pipeline::new(b.pipeline.clone(), b.providers(), &b.db).map_err(|e| e.to_string())?;
        let r = pipeline.run(&clean.prompt().unwrap(), None).map_err(|e| e.to_string())?;
        ensure(
            r.bias_set.is_empty() && r.final_image == r.initial_image && r.vlm_calls == 0 && r.mediator.is_none(),
            || "clean prompt left the fast path".into(),
        )
    });
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_similarity_and_styles() {
    criterion(6, 10, || {
        let pairs = (unit(16), unit(16), 0.01f64..100.0);
        let bad = violations(pairs, CASES, |(a, b, k)| {
            let va = EmbeddingVector::new(a.clone()).unwrap();
            let vb = EmbeddingVector::new(b.clone()).unwrap();
            let c = cosine(&va, &vb).unwrap();
            let sym = c == cosine(&vb, &va).unwrap();
            let range = (-1.0..=1.0).contains(&c);
            let scale = close(c, cosine(&va.scaled(*k).unwrap(), &vb).unwrap(), 1e-12);
            let own = close(cosine(&va, &va).unwrap(), 1.0, 1e-12);
            sym && range && scale && own
        });
        ensure(bad.is_empty(), || format!("{} cosine violations", bad.len()))?;
        let zero = EmbeddingVector::new(vec![0.0; 3]);
        ensure(zero.map_or(true, |z| cosine(&z, &z).is_err()), || "zero vector accepted".into())?;

        let stack = MockStack::sample();
        let db = &stack.db;
        let thresholds = (-1.0f64..=1.0, -1.0f64..=1.0, any::<prop::sample::Index>());
        let texts: Vec<String> = stack.world.brands().iter().map(|b| b.feature.clone()).collect();
        let mono = violations(thresholds, 2_000, |(t1, t2, idx)| {
            let (lo, hi) = if t1 <= t2 { (*t1, *t2) } else { (*t2, *t1) };
            let img = ImageRef::from_bytes("q", texts[idx.index(texts.len())].clone().into_bytes(), "");
            let e = stack.embedder.embed_image(&img).unwrap();
            let ids = |t| db.match_embedding(&e, t).unwrap().iter().map(|m| m.entry.style_id.clone()).collect::<Vec<_>>();
            let (wide, narrow) = (ids(lo), ids(hi));
            narrow.iter().all(|s| wide.contains(s))
        });
        ensure(mono.is_empty(), || format!("{} threshold monotonicity violations", mono.len()))?;

        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let path = dir.path().join("styles.json");
        store::save_aesthetics(db, &path).map_err(|e| e.to_string())?;
        let back: AestheticsDatabase = store::load_aesthetics(&path).map_err(|e| e.to_string())?;
        let bits = |d: &AestheticsDatabase| {
            d.entries().flat_map(|e| e.centroid.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>()
        };
        ensure(back.len() == db.len() && bits(&back) == bits(db), || "persistence is not bit-exact".into())
    });
}

// ---------------------------------------------------------------- 7

fn cider(config: &str, dir: &Path, args: &[&str]) -> (i32, String) {
    let cfg = dir.join("cider.toml");
    fs::write(&cfg, config).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cider"));
    for var in ["T2I", "VLM", "JUDGE", "EMBED", "DETECTOR", "QUALITY"] {
        cmd.env_remove(format!("CIDER_{var}_URL"));
    }
    let o = cmd.current_dir(dir).arg("--config").arg(&cfg).args(args).output().unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

#[test]
fn criterion_7_failure_handling() {
    criterion(7, 10, || {
        let laptop = Prompt::new("A person sitting at a coffee shop table, working on a laptop").unwrap();
        let run = |malformed: u32| {
            let stack = MockStack::sample().with_malformed_vlm_replies(malformed);
            let config = PipelineConfig { detector: stack.detector_config(), ..PipelineConfig::default() };
            let out = Pipeline::new(config, stack.providers(), &stack.db).unwrap().run(&laptop, None);
            (out, stack.vlm_calls())
        };
        let (ok, calls) = run(1);
        let ok = ok.map_err(|e| e.to_string())?;
        ensure(ok.vlm_calls == 2 && calls == 2 && ok.bns_final == 1.0, || "one malformed reply must be retried once".into())?;
        let (err, calls) = run(2);
        let err = err.err().ok_or("two malformed replies must fail")?;
        ensure(
            calls == 2 && err.stage == Stage::Deconstruct && matches!(err.source, Error::MalformedVlmOutput { .. }),
            || format!("expected exactly two calls and a malformed-output error, got {calls} and {err}"),
        )?;

        let stack = MockStack::sample();
        let flaky = FlakyGenerator::new("unbranded laptop");
        let config = PipelineConfig { detector: stack.detector_config(), ..PipelineConfig::default() };
        let mut bench = Bench::new(Providers { t2i: &flaky, ..stack.providers() }, &stack.db, config);
        bench.cache = CacheConfig::default();
        let data = store::load_dataset(Path::new(SAMPLE)).map_err(|e| e.to_string())?;
        let report = bench.run_matrix(&data, &[Condition::CiderFull]).map_err(|e| e.to_string())?;
        let row = report.row(Condition::CiderFull).unwrap();
        let apple = BrandId::from_display("Apple").unwrap();
        let doomed: Vec<&str> = data.iter().filter(|p| p.expected_biases.contains(&apple)).map(|p| p.id.as_str()).collect();
        let failed: Vec<&str> = row.failures.iter().map(|f| f.prompt_id.as_str()).collect();
        ensure(!doomed.is_empty() && failed == doomed && row.per_prompt.len() + failed.len() == data.len(), || {
            format!("failed {failed:?}, expected {doomed:?}, {} scored", row.per_prompt.len())
        })?;
        ensure(row.failures.iter().all(|f| f.stage == "regenerate"), || "failures must name their stage".into())?;

        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mock = fs::read_to_string(MOCK_CONFIG).unwrap();
        let (code, err) = cider("seed = 1\n", dir.path(), &["run", "--prompt", "x"]);
        ensure(code == 1 && err.contains("endpoints.t2i"), || format!("missing endpoint: {code} {err}"))?;
        let down = mock.replacen("t2i = \"mock://\"", &format!("t2i = \"{}\"", common::dead_url()), 1);
        let (code, err) = cider(&down, dir.path(), &["run", "--prompt", "a laptop"]);
        ensure(code == 2 && err.contains("generate"), || format!("provider down: {code} {err}"))?;

        let cached = format!("{mock}\n[cache]\npersistence_path = \"cache.json\"\n");
        let (code, err) = cider(&cached, dir.path(), &["run", "--prompt", "a laptop on a desk"]);
        ensure(code == 0, || format!("seeding the cache: {code} {err}"))?;
        let path = dir.path().join("cache.json");
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v["snapshot"]["entries"][0]["key"] = "nike:explicit".into();
        fs::write(&path, v.to_string()).unwrap();
        let (code, err) = cider(&cached, dir.path(), &["cache", "stats"]);
        ensure(code == 3, || format!("inconsistent cache: {code} {err}"))?;
        Ok(())
    });
}
