//! Best-epoch summaries and SVG curves over finished runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result, ResultExt};
use crate::metrics::{read_metrics_csv, MetricsRecord};

/// Global metrics of one run at its best epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub best_epoch: usize,
    pub macro_f1: f64,
    pub accuracy: Option<f64>,
    pub eval_loss: Option<f64>,
    pub aggregations: usize,
}

/// End-of-epoch global records: the last aggregation of each epoch.
pub fn epoch_end_records(records: &[MetricsRecord]) -> Vec<&MetricsRecord> {
    let mut out: Vec<&MetricsRecord> = Vec::new();
    for r in records.iter().filter(|r| r.is_global()) {
        match out.last_mut() {
            Some(last) if last.epoch == r.epoch => *last = r,
            _ => out.push(r),
        }
    }
    out
}

/// Pick the epoch with the highest end-of-epoch macro-F1 (earliest on ties).
pub fn summarize(label: &str, records: &[MetricsRecord]) -> Result<SummaryRow> {
    let mut best: Option<&MetricsRecord> = None;
    for r in epoch_end_records(records) {
        let Some(f1) = r.macro_f1 else { continue };
        if best.and_then(|b| b.macro_f1).is_none_or(|b| f1 > b) {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| Error::data(format!("run {label:?} has no global macro_f1 values")))?;
    Ok(SummaryRow {
        label: label.to_string(),
        best_epoch: best.epoch,
        macro_f1: best.macro_f1.expect("selected on macro_f1"),
        accuracy: best.accuracy,
        eval_loss: best.eval_loss,
        aggregations: records.iter().filter(|r| r.is_global()).count(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(3);
    let mut out = format!(
        "{:<width$}  {:>10}  {:>8}  {:>8}  {:>9}  {:>12}\n",
        "run", "best_epoch", "macro_f1", "accuracy", "eval_loss", "aggregations"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>10}  {:>8.4}  {:>8}  {:>9}  {:>12}",
            r.label,
            r.best_epoch,
            r.macro_f1,
            cell(r.accuracy),
            cell(r.eval_loss),
            r.aggregations
        );
    }
    out
}

/// One labelled curve of `(x, y)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Global `column` against the aggregation round.
pub fn round_series(label: &str, records: &[MetricsRecord], column: &str) -> Series {
    let points = records
        .iter()
        .filter(|r| r.is_global())
        .filter_map(|r| r.value(column).map(|y| (r.round as f64, y)))
        .collect();
    Series {
        label: label.to_string(),
        points,
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line chart with a legend. Identical input gives identical bytes.
pub fn svg_line_chart(title: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 150.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.2}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<path d="M{left:.2},{top:.2} L{left:.2},{:.2} L{:.2},{:.2}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph
    );
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{y:.3}</text>"#,
            left - 6.0,
            sy(y) + 4.0
        );
        let x = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{x:.0}</text>"#,
            sx(x),
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">aggregation round</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        if !d.is_empty() {
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, d.join(" "));
        }
        let ly = top + 16.0 * i as f64 + 8.0;
        let lx = left + pw + 12.0;
        let _ = writeln!(out, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Label of a metrics file: its directory name for `…/<run>/metrics.csv`,
/// otherwise the file stem.
pub fn run_label(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    if stem == "metrics" {
        if let Some(dir) = path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
            return dir.to_string();
        }
    }
    stem.to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<SummaryRow>,
    pub table: String,
    /// `(file name, SVG text)` pairs.
    pub charts: Vec<(String, String)>,
}

/// Summarize metrics files and draw macro-F1 and eval-loss curves.
pub fn build_report(paths: &[PathBuf]) -> Result<Report> {
    if paths.is_empty() {
        return Err(Error::config("report needs at least one metrics.csv"));
    }
    let mut rows = Vec::new();
    let mut f1 = Vec::new();
    let mut loss = Vec::new();
    for p in paths {
        let records = read_metrics_csv(p)?;
        let label = run_label(p);
        rows.push(summarize(&label, &records).context(|| p.display().to_string())?);
        f1.push(round_series(&label, &records, "macro_f1"));
        loss.push(round_series(&label, &records, "eval_loss"));
    }
    Ok(Report {
        table: summary_table(&rows),
        rows,
        charts: vec![
            ("macro_f1.svg".into(), svg_line_chart("Pooled eval macro-F1", "macro_f1", &f1)),
            ("eval_loss.svg".into(), svg_line_chart("Pooled eval loss", "eval_loss", &loss)),
        ],
    })
}
