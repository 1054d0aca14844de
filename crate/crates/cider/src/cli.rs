//! The `cider` command line.
//!
//! Exit status: 0 success, 1 configuration or input error, 2 provider
//! failure, 3 internal invariant violation.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use cider_core::bench::Bench;
use cider_core::bns::BnsEvaluator;
use cider_core::cache::RedirectionCache;
use cider_core::embedding::stable_hash64;
use cider_core::model::{BrandId, Condition, ImageRef, Prompt};
use cider_core::pipeline::Pipeline;

use crate::backend::Backends;
use crate::config::{env_lookup, Config};
use crate::error::{Error, Result};
use crate::report::{self, ReportFormat};
use crate::store;

#[derive(Debug, Parser)]
#[command(name = "cider", version, about = "Detect and mitigate brand bias in text-to-image generation")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Overrides the configured base seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for records and reports.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one prompt through the pipeline.
    Run {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        condition: Option<Condition>,
        /// Maximum detect/refine rounds.
        #[arg(long)]
        rounds: Option<u32>,
        /// Skip the redirection cache.
        #[arg(long)]
        no_cache: bool,
    },
    /// Run a dataset under several conditions and write reports.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "baseline,negative-prompt,cider-no-scoring,cider-full")]
        conditions: Vec<Condition>,
        #[arg(long, value_delimiter = ',', default_value = "csv,markdown")]
        formats: Vec<String>,
        /// Row label for the generator under test.
        #[arg(long, default_value = "t2i")]
        model: String,
    },
    /// Mean BNS of the full pipeline for each selection weight.
    SweepW {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "w", value_delimiter = ',', required = true)]
        w_values: Vec<f64>,
    },
    /// Cumulative VLM calls with and without the cache over shuffled replays.
    CacheAblation {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        /// Exact-key lookups only.
        #[arg(long)]
        exact: bool,
    },
    /// Manage the brand-style database.
    Aesthetics {
        /// Database file; defaults to `aesthetics.path` from the config.
        #[arg(long, global = true)]
        db: Option<PathBuf>,
        #[command(subcommand)]
        action: AestheticsAction,
    },
    /// Inspect or reset the persisted redirection cache.
    Cache {
        /// Cache file; defaults to `cache.persistence_path` from the config.
        #[arg(long, global = true)]
        file: Option<PathBuf>,
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Judge one image and print its Brand Neutrality Score.
    Bns {
        #[arg(long)]
        image: PathBuf,
    },
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Subcommand)]
pub enum AestheticsAction {
    /// Add or replace a style from exemplar images.
    Ingest(IngestArgs),
    List,
    /// Styles matching an image at or above a threshold.
    Match {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    brand: String,
    #[arg(long)]
    style_id: String,
    #[arg(long, default_value = "")]
    description: String,
    #[arg(long = "exemplar", required = true)]
    exemplars: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    Stats,
    Clear,
    /// Write the cache snapshot as JSON to a file or stdout.
    Export {
        #[arg(long)]
        to: Option<PathBuf>,
    },
}

struct Ctx {
    config: Config,
    json: bool,
    out: PathBuf,
}

impl Ctx {
    fn backends(&self) -> Result<Backends> {
        Backends::from_config(&self.config, &env_lookup)
    }

    fn emit(&self, human: &str, machine: Value) {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        let _ = if self.json {
            writeln!(lock, "{}", serde_json::to_string_pretty(&machine).expect("json values serialize"))
        } else {
            writeln!(lock, "{}", human.trim_end())
        };
    }
}

/// Entry point; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("CIDER_LOG")
        .format_timestamp(None)
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = Config::load(cli.config.as_deref(), &env_lookup)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    let ctx = Ctx {
        out: config.out.clone(),
        json: cli.json,
        config,
    };
    match cli.command {
        Command::Run {
            prompt,
            condition,
            rounds,
            no_cache,
        } => cmd_run(&ctx, &prompt, condition, rounds, no_cache),
        Command::Bench {
            dataset,
            conditions,
            formats,
            model,
        } => cmd_bench(&ctx, &dataset, &conditions, &formats, model),
        Command::SweepW { dataset, w_values } => cmd_sweep(&ctx, &dataset, &w_values),
        Command::CacheAblation { dataset, runs, exact } => cmd_ablation(&ctx, &dataset, runs, exact),
        Command::Aesthetics { db, action } => cmd_aesthetics(&ctx, db, action),
        Command::Cache { file, action } => cmd_cache(&ctx, file, action),
        Command::Bns { image } => cmd_bns(&ctx, &image),
        Command::Config => {
            let text = toml::to_string_pretty(&ctx.config).map_err(|e| Error::Config(e.to_string()))?;
            ctx.emit(&text, json!({"command": "config", "config": ctx.config}));
            Ok(())
        }
    }
}

fn cmd_run(ctx: &Ctx, text: &str, condition: Option<Condition>, rounds: Option<u32>, no_cache: bool) -> Result<()> {
    let mut b = ctx.backends()?;
    if let Some(c) = condition {
        b.pipeline.condition = c;
    }
    if let Some(r) = rounds {
        b.pipeline.max_rounds = r;
    }
    let prompt = Prompt::new(text)?;
    let cache_path = b.cache.persistence_path.clone().map(PathBuf::from);
    let mut cache = match (&cache_path, no_cache) {
        (_, true) => None,
        (Some(p), false) => Some(store::load_or_new_cache(p, b.cache.clone())?),
        (None, false) => Some(RedirectionCache::new(b.cache.clone())?),
    };
    let pipeline = Pipeline::new(b.pipeline.clone(), b.providers(), &b.db)?;
    let record = pipeline.run(&prompt, cache.as_mut())?;
    if let (Some(p), Some(c)) = (&cache_path, &cache) {
        store::save_cache(c, p)?;
    }
    let path = store::write_run_record(&record, &ctx.out)?;
    let human = format!("{}\nrecord: {}", record.summary_line(), path.display());
    ctx.emit(
        &human,
        json!({"command": "run", "record_path": path, "record": record}),
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Vec<cider_core::bench::BenchPrompt>> {
    store::load_dataset(path)
}

fn bench_for<'a>(b: &'a Backends) -> Bench<'a> {
    let mut bench = Bench::new(b.providers(), &b.db, b.pipeline.clone());
    bench.cache = b.cache.clone();
    bench.quality = b.quality();
    bench
}

fn cmd_bench(ctx: &Ctx, dataset: &Path, conditions: &[Condition], formats: &[String], model: String) -> Result<()> {
    let formats = formats
        .iter()
        .map(|f| f.parse::<ReportFormat>())
        .collect::<Result<Vec<_>>>()?;
    let data = load_dataset(dataset)?;
    let b = ctx.backends()?;
    let mut bench = bench_for(&b);
    bench.model = model;
    let report = bench.run_matrix(&data, conditions)?;
    let mut files = Vec::new();
    for f in formats {
        files.push(report::emit_report(&report, f, &ctx.out)?);
    }
    let per_prompt = ctx.out.join("per_prompt.csv");
    store::write_atomic(&per_prompt, report::render_per_prompt_csv(&report)?.as_bytes())?;
    files.push(per_prompt);
    let records_dir = ctx.out.join("records");
    for r in &report.records {
        store::write_run_record(r, &records_dir)?;
    }
    let failures: usize = report.rows.iter().map(|r| r.failures.len()).sum();
    let mut human = report::render_markdown(&report);
    human.push_str(&format!(
        "\n{} runs, {failures} failed; files: {}\n",
        report.records.len() + failures,
        files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
    ));
    ctx.emit(&human, json!({"command": "bench", "files": files, "report": report}));
    Ok(())
}

fn cmd_sweep(ctx: &Ctx, dataset: &Path, ws: &[f64]) -> Result<()> {
    let data = load_dataset(dataset)?;
    let b = ctx.backends()?;
    let points = bench_for(&b).sweep_w(&data, ws)?;
    let path = ctx.out.join("sweep_w.csv");
    store::write_atomic(&path, report::render_sweep_csv(&points)?.as_bytes())?;
    let mut human = String::new();
    for p in &points {
        let v = p.mean_bns_percent.map_or("n/a".to_string(), |v| format!("{v:.2}"));
        human.push_str(&format!("w = {:<5} BNS {v}%\n", p.w));
    }
    human.push_str(&format!("curve: {}\n", path.display()));
    ctx.emit(&human, json!({"command": "sweep-w", "file": path, "points": points}));
    Ok(())
}

fn cmd_ablation(ctx: &Ctx, dataset: &Path, runs: usize, exact: bool) -> Result<()> {
    let data = load_dataset(dataset)?;
    let mut b = ctx.backends()?;
    if exact {
        b.cache.allow_superset_cover = false;
    }
    let curve = crate::ablation::cache_ablation(&bench_for(&b), &data, runs, ctx.config.seed)?;
    let path = ctx.out.join("cache_ablation.csv");
    store::write_atomic(&path, report::render_ablation_csv(&curve)?.as_bytes())?;
    let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
    let human = format!(
        "{} requests x {} runs: mean VLM calls {:.2} with cache, {:.2} without\ncurve: {}",
        curve.cache_on.len(),
        curve.runs,
        last(&curve.cache_on),
        last(&curve.cache_off),
        path.display()
    );
    ctx.emit(&human, json!({"command": "cache-ablation", "file": path, "curve": curve}));
    Ok(())
}

/// Reads an image file; the id hashes its bytes.
fn image_from_file(path: &Path) -> Result<ImageRef> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = format!("file-{:016x}", stable_hash64(&[&bytes]));
    Ok(ImageRef::from_bytes(id, bytes, ""))
}

fn cmd_aesthetics(ctx: &Ctx, db_path: Option<PathBuf>, action: AestheticsAction) -> Result<()> {
    let mut config = ctx.config.clone();
    if db_path.is_some() {
        config.aesthetics.path = db_path;
    }
    let mut b = Backends::from_config(&config, &env_lookup)?;
    match action {
        AestheticsAction::Ingest(args) => {
            let path = b.aesthetics_path.clone().ok_or_else(|| Error::MissingKey {
                key: "aesthetics.path".into(),
                hint: "pass --db or set it in the config file".into(),
            })?;
            let brand = BrandId::from_display(&args.brand)?;
            let images = args
                .exemplars
                .iter()
                .map(|p| image_from_file(p))
                .collect::<Result<Vec<_>>>()?;
            let mut db = std::mem::replace(&mut b.db, cider_core::aesthetics::AestheticsDatabase::new(2));
            let entry = db
                .ingest_style(b.embedder(), brand, &args.style_id, &args.description, &images)?
                .clone();
            store::save_aesthetics(&db, &path)?;
            ctx.emit(
                &format!("ingested {} ({} exemplars) into {}", entry.style_id, entry.exemplar_count, path.display()),
                json!({"command": "aesthetics ingest", "style_id": entry.style_id, "brand": entry.brand.canonical_name(), "exemplars": entry.exemplar_count, "path": path}),
            );
        }
        AestheticsAction::List => {
            let rows: Vec<Value> = b
                .db
                .entries()
                .map(|e| json!({"style_id": e.style_id, "brand": e.brand.canonical_name(), "description": e.description, "exemplars": e.exemplar_count}))
                .collect();
            let human: String = b
                .db
                .entries()
                .map(|e| format!("{}\t{}\t{}\t{}\n", e.style_id, e.brand, e.exemplar_count, e.description))
                .collect();
            ctx.emit(&human, json!({"command": "aesthetics list", "styles": rows}));
        }
        AestheticsAction::Match { image, threshold } => {
            let img = image_from_file(&image)?;
            let emb = b.embedder().embed_image(&img)?;
            let t = threshold.unwrap_or(b.db.threshold());
            let matches = b.db.match_embedding(&emb, t)?;
            let rows: Vec<Value> = matches
                .iter()
                .map(|m| json!({"style_id": m.entry.style_id, "brand": m.entry.brand.canonical_name(), "similarity": m.similarity}))
                .collect();
            let human: String = matches
                .iter()
                .map(|m| format!("{}\t{}\t{:.4}\n", m.entry.style_id, m.entry.brand, m.similarity))
                .collect();
            ctx.emit(&human, json!({"command": "aesthetics match", "threshold": t, "matches": rows}));
        }
    }
    Ok(())
}

fn cmd_cache(ctx: &Ctx, file: Option<PathBuf>, action: CacheAction) -> Result<()> {
    let path = file
        .or_else(|| ctx.config.cache.persistence_path.clone().map(PathBuf::from))
        .ok_or_else(|| Error::MissingKey {
            key: "cache.persistence_path".into(),
            hint: "pass --file or set it in the config file".into(),
        })?;
    let mut cache = store::load_or_new_cache(&path, ctx.config.cache.clone())?;
    match action {
        CacheAction::Stats => {
            let s = cache.stats();
            let human = format!(
                "entries {}\nhits {}\nmisses {}\ninserts {}\nevictions {}\nvlm calls saved {}",
                s.entries, s.hits, s.misses, s.inserts, s.evictions, s.vlm_calls_saved
            );
            ctx.emit(&human, json!({"command": "cache stats", "path": path, "stats": s}));
        }
        CacheAction::Clear => {
            let removed = cache.len();
            cache.clear();
            store::save_cache(&cache, &path)?;
            ctx.emit(
                &format!("removed {removed} entries from {}", path.display()),
                json!({"command": "cache clear", "path": path, "removed": removed}),
            );
        }
        CacheAction::Export { to } => {
            let snapshot = serde_json::to_string_pretty(&cache.snapshot()).expect("snapshots serialize");
            match to {
                Some(dest) => {
                    store::write_atomic(&dest, snapshot.as_bytes())?;
                    ctx.emit(
                        &format!("exported {} entries to {}", cache.len(), dest.display()),
                        json!({"command": "cache export", "path": dest, "entries": cache.len()}),
                    );
                }
                None => println!("{snapshot}"),
            }
        }
    }
    Ok(())
}

fn cmd_bns(ctx: &Ctx, image: &Path) -> Result<()> {
    let b = ctx.backends()?;
    let img = image_from_file(image)?;
    let evaluator = BnsEvaluator::new(b.pipeline.bns, b.providers().judge)?;
    let (report, score) = evaluator.score(&img)?;
    let mut human = format!("BNS {score:.6}\n");
    for f in &report.findings {
        human.push_str(&format!("  {}\t{:.3}\n", f.brand, f.confidence));
    }
    ctx.emit(&human, json!({"command": "bns", "image": image, "bns": score, "findings": report.findings}));
    Ok(())
}
