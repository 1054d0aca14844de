//! Report emitters: CSV, Markdown and JSON lines, plus the sweep and
//! ablation curve CSVs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cider_core::bench::{percent_change, AblationCurve, BenchReport, ReportRow, SweepPoint};
use cider_core::model::Condition;

use crate::error::{Error, Result};
use crate::store::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    JsonLines,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "report.csv",
            ReportFormat::Markdown => "report.md",
            ReportFormat::JsonLines => "report.jsonl",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json-lines" | "jsonl" => Ok(ReportFormat::JsonLines),
            other => Err(Error::Schema(format!(
                "unknown report format `{other}` (expected csv, markdown or json-lines)"
            ))),
        }
    }
}

fn baseline_of<'r>(report: &'r BenchReport, row: &ReportRow) -> Option<&'r ReportRow> {
    report
        .rows
        .iter()
        .find(|r| r.model == row.model && r.condition == Condition::Baseline)
}

fn bns_change(report: &BenchReport, row: &ReportRow) -> Option<f64> {
    if row.condition == Condition::Baseline {
        return None;
    }
    let base = baseline_of(report, row)?.mean_bns_percent?;
    percent_change(base, row.mean_bns_percent?)
}

fn quality_change(report: &BenchReport, row: &ReportRow, metric: &str) -> Option<f64> {
    if row.condition == Condition::Baseline {
        return None;
    }
    let base = *baseline_of(report, row)?.quality.get(metric)?;
    percent_change(base, *row.quality.get(metric)?)
}

/// `"+50.0%"` style annotation.
pub fn format_change(change: f64) -> String {
    format!("{change:+.1}%")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn render_csv(report: &BenchReport) -> Result<String> {
    let metrics = report.quality_metrics();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "model",
        "condition",
        "method",
        "mean_bns_percent",
        "bns_change_percent",
        "prompts",
        "failures",
        "vlm_calls",
        "cache_hits",
        "detection_recall",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(metrics.iter().cloned());
    let to_err = |e| csv_error(Path::new("report.csv"), e);
    w.write_record(&header).map_err(to_err)?;
    for row in &report.rows {
        let mut rec = vec![
            row.model.clone(),
            row.condition.as_str().to_string(),
            row.condition.label().to_string(),
            opt(row.mean_bns_percent),
            opt(bns_change(report, row)),
            row.per_prompt.len().to_string(),
            row.failures.len().to_string(),
            row.vlm_calls.to_string(),
            row.cache_hits.to_string(),
            opt(row.detection_recall),
        ];
        rec.extend(metrics.iter().map(|m| opt(row.quality.get(m).copied())));
        w.write_record(&rec).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// Markdown table: method, BNS (%) and any quality columns, each annotated
/// with its change against the baseline row.
pub fn render_markdown(report: &BenchReport) -> String {
    let metrics = report.quality_metrics();
    let multi_model = report.rows.iter().any(|r| r.model != report.rows[0].model);
    let mut out = String::new();
    let mut cols: Vec<String> = Vec::new();
    if multi_model {
        cols.push("Model".into());
    }
    cols.push("Method".into());
    cols.push("BNS (%)".into());
    cols.extend(metrics.iter().cloned());
    cols.push("Failures".into());
    let _ = writeln!(out, "| {} |", cols.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(cols.len()));
    for row in &report.rows {
        let mut cells: Vec<String> = Vec::new();
        if multi_model {
            cells.push(row.model.clone());
        }
        cells.push(row.condition.label().into());
        let bns = match (row.mean_bns_percent, bns_change(report, row)) {
            (Some(v), Some(c)) => format!("{v:.2} ({})", format_change(c)),
            (Some(v), None) => format!("{v:.2}"),
            (None, _) => "n/a".into(),
        };
        cells.push(bns);
        for m in &metrics {
            cells.push(match (row.quality.get(m), quality_change(report, row, m)) {
                (Some(v), Some(c)) => format!("{v:.3} ({})", format_change(c)),
                (Some(v), None) => format!("{v:.3}"),
                (None, _) => "n/a".into(),
            });
        }
        cells.push(row.failures.len().to_string());
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out
}

pub fn render_json_lines(report: &BenchReport) -> String {
    report
        .rows
        .iter()
        .map(|r| serde_json::to_string(r).expect("rows serialize") + "\n")
        .collect()
}

pub fn render(report: &BenchReport, format: ReportFormat) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::Schema("cannot emit an empty report".into()));
    }
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => Ok(render_markdown(report)),
        ReportFormat::JsonLines => Ok(render_json_lines(report)),
    }
}

/// Writes the report in `format` into `dir` and returns the file path.
pub fn emit_report(report: &BenchReport, format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    let text = render(report, format)?;
    let path = dir.join(format.file_name());
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Per-prompt scores of every row.
pub fn render_per_prompt_csv(report: &BenchReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e| csv_error(Path::new("per_prompt.csv"), e);
    w.write_record(["model", "condition", "prompt_id", "bns_initial", "bns_final", "vlm_calls", "cache_hit"])
        .map_err(to_err)?;
    for row in &report.rows {
        for p in &row.per_prompt {
            w.write_record([
                row.model.clone(),
                row.condition.as_str().into(),
                p.prompt_id.clone(),
                p.bns_initial.to_string(),
                p.bns_final.to_string(),
                p.vlm_calls.to_string(),
                p.cache_hit.to_string(),
            ])
            .map_err(to_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

pub fn render_sweep_csv(points: &[SweepPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e| csv_error(Path::new("sweep_w.csv"), e);
    w.write_record(["w", "mean_bns_percent", "failures"]).map_err(to_err)?;
    for p in points {
        w.write_record([p.w.to_string(), opt(p.mean_bns_percent), p.failures.to_string()])
            .map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// One row per request index (1-based), ready for plotting.
pub fn render_ablation_csv(curve: &AblationCurve) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e| csv_error(Path::new("cache_ablation.csv"), e);
    w.write_record([
        "request_index",
        "mean_cumulative_calls_cache_on",
        "mean_cumulative_calls_cache_off",
    ])
    .map_err(to_err)?;
    for (i, (on, off)) in curve.cache_on.iter().zip(&curve.cache_off).enumerate() {
        w.write_record([(i + 1).to_string(), on.to_string(), off.to_string()])
            .map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}
