//! Result tables (CSV, JSON, Markdown) and SVG figures.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::fixed;
use crate::metrics::MetricReport;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("nothing to report")]
    Empty,
    #[error("length mismatch: {truth} truth values, {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("malformed table: {0}")]
    Parse(String),
}

/// One table row: a strategy run against a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model_name: String,
    pub strategy: String,
    pub metrics: MetricReport,
    pub requested: usize,
    pub failures: usize,
    pub cache_hit_rate: f64,
    pub wall_time_secs: f64,
}

impl RunSummary {
    pub fn scored(&self) -> usize {
        self.requested - self.failures
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
    Markdown,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
            TableFormat::Markdown => "md",
        }
    }
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            "md" | "markdown" => Ok(TableFormat::Markdown),
            other => Err(format!("unknown table format `{other}` (csv, json, markdown)")),
        }
    }
}

pub const CSV_HEADER: [&str; 8] = [
    "model", "strategy", "plcc", "srocc", "krocc", "overall", "n", "failures",
];

fn sorted(summaries: &[RunSummary]) -> Vec<&RunSummary> {
    let mut rows: Vec<&RunSummary> = summaries.iter().collect();
    // stable: equal scores keep input order
    rows.sort_by(|a, b| a.metrics.overall.total_cmp(&b.metrics.overall));
    rows
}

fn round4(v: f64) -> f64 {
    fixed(v, 4).parse().unwrap_or(v)
}

/// Renders rows in ascending Overall order with four decimals.
pub fn emit_table(summaries: &[RunSummary], format: TableFormat) -> Result<Vec<u8>, ReportError> {
    if summaries.is_empty() {
        return Err(ReportError::Empty);
    }
    let rows = sorted(summaries);
    Ok(match format {
        TableFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            w.write_record(CSV_HEADER).expect("in-memory write");
            for r in rows {
                let m = &r.metrics;
                w.write_record([
                    r.model_name.clone(),
                    r.strategy.clone(),
                    fixed(m.plcc, 4),
                    fixed(m.srocc, 4),
                    fixed(m.krocc, 4),
                    fixed(m.overall, 4),
                    m.n.to_string(),
                    r.failures.to_string(),
                ])
                .expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
        TableFormat::Json => {
            let v: Vec<_> = rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "model": r.model_name,
                        "strategy": r.strategy,
                        "plcc": round4(r.metrics.plcc),
                        "srocc": round4(r.metrics.srocc),
                        "krocc": round4(r.metrics.krocc),
                        "overall": round4(r.metrics.overall),
                        "n": r.metrics.n,
                        "failures": r.failures,
                        "cache_hit_rate": round4(r.cache_hit_rate),
                    })
                })
                .collect();
            let mut out = serde_json::to_vec_pretty(&v).expect("serializable");
            out.push(b'\n');
            out
        }
        TableFormat::Markdown => {
            let mut s = String::from("| Model | Strategy | PLCC | SROCC | KROCC | Overall Score |\n");
            s.push_str("|---|---|---:|---:|---:|---:|\n");
            for r in rows {
                let m = &r.metrics;
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} |",
                    r.model_name.replace('|', "\\|"),
                    r.strategy,
                    fixed(m.plcc, 4),
                    fixed(m.srocc, 4),
                    fixed(m.krocc, 4),
                    fixed(m.overall, 4)
                );
            }
            s.into_bytes()
        }
    })
}

/// A row read back from a CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub model_name: String,
    pub strategy: String,
    pub metrics: MetricReport,
    pub failures: usize,
}

pub fn parse_table_csv(bytes: &[u8]) -> Result<Vec<TableRow>, ReportError> {
    let bad = |e: &dyn std::fmt::Display| ReportError::Parse(e.to_string());
    let mut rd = csv::Reader::from_reader(bytes);
    let header = rd.headers().map_err(|e| bad(&e))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(ReportError::Parse(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(&e))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(&e));
        out.push(TableRow {
            model_name: rec[0].to_string(),
            strategy: rec[1].to_string(),
            metrics: MetricReport {
                plcc: num(2)?,
                srocc: num(3)?,
                krocc: num(4)?,
                overall: num(5)?,
                n: rec[6].parse().map_err(|e| bad(&e))?,
            },
            failures: rec[7].parse().map_err(|e| bad(&e))?,
        });
    }
    Ok(out)
}

fn check_pairs(truth: &[f64], pred: &[f64]) -> Result<(), ReportError> {
    if truth.len() != pred.len() {
        return Err(ReportError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(ReportError::Empty);
    }
    if truth.iter().any(|v| !v.is_finite()) {
        return Err(ReportError::NonFinite("truth"));
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(ReportError::NonFinite("pred"));
    }
    Ok(())
}

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;
const PLOT: f64 = SIZE - 2.0 * MARGIN;
const SCORE_MAX: f64 = 4.0;

fn px(v: f64) -> f64 {
    MARGIN + v.clamp(0.0, SCORE_MAX) / SCORE_MAX * PLOT
}

fn py(v: f64) -> f64 {
    SIZE - MARGIN - v.clamp(0.0, SCORE_MAX) / SCORE_MAX * PLOT
}

fn c(v: f64) -> String {
    fixed(v, 2)
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        SIZE / 2.0
    );
    s
}

fn x_axis(s: &mut String, label: &str, ticks: &[(f64, String)]) {
    let base = SIZE - MARGIN;
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        c(MARGIN),
        c(base),
        c(SIZE - MARGIN),
        c(base)
    );
    for (pos, text) in ticks {
        let x = c(px(*pos));
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="black"/>"#,
            c(base),
            c(base + 5.0)
        );
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{text}</text>"#,
            c(base + 18.0)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
        c(SIZE / 2.0),
        c(SIZE - 14.0)
    );
}

fn y_axis(s: &mut String, label: &str, ticks: &[(f64, String)], map: impl Fn(f64) -> f64) {
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        c(MARGIN),
        c(MARGIN),
        c(MARGIN),
        c(SIZE - MARGIN)
    );
    for (pos, text) in ticks {
        let y = c(map(*pos));
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#,
            c(MARGIN - 5.0),
            c(MARGIN)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end" dominant-baseline="middle">{text}</text>"#,
            c(MARGIN - 8.0)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{label}</text>"#,
        c(SIZE / 2.0),
        c(SIZE / 2.0)
    );
}

fn score_ticks() -> Vec<(f64, String)> {
    (0..=4).map(|i| (i as f64, i.to_string())).collect()
}

/// Scatter of model score against radiologist score on fixed `[0, 4]` axes
/// with the identity line. Each pair is one `<circle class="point">`.
pub fn emit_scatter(truth: &[f64], pred: &[f64]) -> Result<String, ReportError> {
    check_pairs(truth, pred)?;
    let mut s = svg_open("Radiologist vs model scores");
    x_axis(&mut s, "Radiologist score", &score_ticks());
    y_axis(&mut s, "Model score", &score_ticks(), py);
    let _ = writeln!(
        s,
        r#"<line class="identity" x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 3"/>"#,
        c(px(0.0)),
        c(py(0.0)),
        c(px(SCORE_MAX)),
        c(py(SCORE_MAX))
    );
    for (t, p) in truth.iter().zip(pred) {
        let _ = writeln!(
            s,
            r#"<circle class="point" cx="{}" cy="{}" r="3.5" fill="steelblue" fill-opacity="0.7"/>"#,
            c(px(*t)),
            c(py(*p))
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub const BIN_WIDTH: f64 = 0.25;
pub const BINS: usize = 16;

/// Counts per bin `[i/4, (i+1)/4)`; the top bin also takes 4.0.
pub fn histogram_bins(values: &[f64]) -> [usize; BINS] {
    let mut bins = [0; BINS];
    for &v in values {
        let i = ((v / BIN_WIDTH).floor().max(0.0) as usize).min(BINS - 1);
        bins[i] += 1;
    }
    bins
}

/// Overlaid radiologist and model histograms. Every bin of both series is a
/// `<rect>` carrying `data-series`, `data-bin` and `data-count`.
pub fn emit_histogram(truth: &[f64], pred: &[f64]) -> Result<String, ReportError> {
    check_pairs(truth, pred)?;
    let series = [
        ("radiologist", "Radiologist", "#4c72b0", histogram_bins(truth)),
        ("model", "Model", "#dd8452", histogram_bins(pred)),
    ];
    let peak = series.iter().flat_map(|s| s.3).max().unwrap_or(1).max(1);
    let step = ((peak as f64 / 5.0).ceil() as usize).max(1);
    let top = step * peak.div_ceil(step);
    let hy = |count: f64| SIZE - MARGIN - count / top as f64 * PLOT;

    let mut s = svg_open("Score distributions");
    let ticks: Vec<(f64, String)> = (0..=top).step_by(step).map(|v| (v as f64, v.to_string())).collect();
    y_axis(&mut s, "Count", &ticks, hy);
    let bar = PLOT / BINS as f64;
    for (key, _, color, bins) in &series {
        for (i, &n) in bins.iter().enumerate() {
            let y = hy(n as f64);
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-series="{key}" data-bin="{i}" data-count="{n}" x="{}" y="{}" width="{}" height="{}" fill="{color}" fill-opacity="0.55"/>"#,
                c(MARGIN + i as f64 * bar),
                c(y),
                c(bar),
                c(SIZE - MARGIN - y)
            );
        }
    }
    x_axis(&mut s, "Score", &score_ticks());
    for (j, (_, label, color, _)) in series.iter().enumerate() {
        let y = MARGIN + 4.0 + 18.0 * j as f64;
        let x = SIZE - MARGIN - 110.0;
        let _ = writeln!(
            s,
            r#"<rect class="legend" x="{}" y="{}" width="12" height="12" fill="{color}" fill-opacity="0.55"/>"#,
            c(x),
            c(y)
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{label}</text>"#, c(x + 18.0), c(y + 10.0));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
