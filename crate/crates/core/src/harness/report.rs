//! Comparison tables, the JSON report and radar-chart data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ablation::{ImportanceSummary, TopicStats};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

/// Decimal places in rendered tables and radar data.
pub const PLACES: usize = 3;
pub const REPORT_VERSION: u32 = 1;
/// The JSON Schema that `report.json` conforms to.
pub const REPORT_SCHEMA: &str = include_str!("../../schemas/report.schema.json");

/// Formats `x` with `places` decimals, rounding the shortest round-trip
/// decimal form of `x` half to even (`0.6245` becomes `0.624`).
pub fn format_fixed(x: f64, places: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    // Display for f64 never uses exponent notation
    let repr = format!("{}", x.abs());
    let (int, frac) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int.bytes().chain(frac.bytes().chain(std::iter::repeat(b'0')).take(places)).collect();
    let rest = frac.as_bytes().get(places..).unwrap_or(&[]);
    let round_up = match rest.first() {
        None => false,
        Some(&d) if d != b'5' => d > b'5',
        Some(_) => rest[1..].iter().any(|&d| d != b'0') || digits.last().is_some_and(|&d| (d - b'0') % 2 == 1),
    };
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - places;
    let mut out = String::new();
    if x.is_sign_negative() && digits.iter().any(|&d| d != b'0') {
        out.push('-');
    }
    out.push_str(std::str::from_utf8(&digits[..split]).expect("ascii digits"));
    if places > 0 {
        out.push('.');
        out.push_str(std::str::from_utf8(&digits[split..]).expect("ascii digits"));
    }
    out
}

pub fn fmt3(x: f64) -> String {
    format_fixed(x, PLACES)
}

/// One line of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub auroc: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub n_runs: usize,
}

impl TableRow {
    pub fn from_report(model: impl Into<String>, report: &MetricsReport) -> Self {
        TableRow {
            model: model.into(),
            auroc: report.auroc,
            macro_f1: report.macro_f1,
            macro_precision: report.macro_precision,
            macro_recall: report.macro_recall,
            n_runs: report.n_runs,
        }
    }

    fn cells(&self) -> [String; 5] {
        [
            self.model.clone(),
            fmt3(self.auroc),
            fmt3(self.macro_f1),
            fmt3(self.macro_precision),
            fmt3(self.macro_recall),
        ]
    }
}

pub const TABLE_HEADER: [&str; 5] = ["Model", "AUC", "MACRO F1", "PRECISION", "RECALL"];

pub fn render_tsv(rows: &[TableRow]) -> String {
    let mut out = TABLE_HEADER.join("\t");
    out.push('\n');
    for row in rows {
        out.push_str(&row.cells().join("\t"));
        out.push('\n');
    }
    out
}

pub fn render_markdown(rows: &[TableRow]) -> String {
    let mut out = format!("| {} |\n", TABLE_HEADER.join(" | "));
    out.push_str("|---|---:|---:|---:|---:|\n");
    for row in rows {
        let _ = writeln!(out, "| {} |", row.cells().join(" | "));
    }
    out
}

/// Everything an experiment reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub config_hash: String,
    pub n_test_patients: usize,
    pub test_positive_fraction: f64,
    /// Label-only baselines and the single-note model.
    pub table1: Vec<TableRow>,
    /// The single-note model and every MS-n model.
    pub table2: Vec<TableRow>,
    pub models: BTreeMap<String, MetricsReport>,
    pub importance: Option<ImportanceSummary>,
    pub topic_stats: Vec<TopicStats>,
    pub notices: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// `table1`/`table2` as TSV and markdown.
    Table,
    Json,
    /// `radar.csv`: topic, name, raw and normalized ΔF1 in lexicon order.
    Radar,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Table, ReportFormat::Json, ReportFormat::Radar];
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

pub fn radar_csv(importance: &ImportanceSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("radar data: {e}"));
    w.write_record(["topic", "name", "raw_delta_f1", "normalized_delta_f1"]).map_err(csv_err)?;
    for t in &importance.topics {
        let normalized = t.normalized_delta_f1.map(fmt3).unwrap_or_default();
        w.write_record([t.topic.as_str(), t.name.as_str(), &fmt3(t.raw_delta_f1), &normalized])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("radar data: {e}")))?;
    Ok(String::from_utf8(bytes).expect("utf-8 input"))
}

/// Writes the requested formats into `dir` and returns the files written.
/// A report without importance topics gets no radar file; a notice is
/// logged and returned instead.
pub fn emit_report(report: &ExperimentReport, dir: &Path, formats: &[ReportFormat]) -> Result<(Vec<PathBuf>, Vec<String>)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut notices = Vec::new();
    for format in formats {
        match format {
            ReportFormat::Table => {
                for (name, rows) in [("table1", &report.table1), ("table2", &report.table2)] {
                    write(dir.join(format!("{name}.tsv")), &render_tsv(rows), &mut written)?;
                    write(dir.join(format!("{name}.md")), &render_markdown(rows), &mut written)?;
                }
            }
            ReportFormat::Json => {
                let json = serde_json::to_string_pretty(report)? + "\n";
                write(dir.join("report.json"), &json, &mut written)?;
            }
            ReportFormat::Radar => match &report.importance {
                Some(imp) if !imp.topics.is_empty() => write(dir.join("radar.csv"), &radar_csv(imp)?, &mut written)?,
                _ => {
                    let notice = "radar.csv omitted: the ablation report is empty".to_string();
                    log::warn!("{notice}");
                    let stale = dir.join("radar.csv");
                    if stale.exists() {
                        std::fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
                    }
                    notices.push(notice);
                }
            },
        }
    }
    Ok((written, notices))
}
