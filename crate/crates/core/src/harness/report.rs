//! Markdown and CSV renderings of an [`EvalReport`].

use std::fmt::Write;
use std::path::Path;
use std::str::FromStr;

use super::experiment::EvalReport;
use crate::error::{Error, Result};

pub const HUMAN_ROW: &str = "Average Human Performance";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            _ => Err(Error::Unknown { what: "report format", name: s.to_string() }),
        }
    }
}

impl ReportFormat {
    /// From a file extension (`report.md`, `report.csv`).
    pub fn from_path(path: &Path) -> Result<Self> {
        path.extension().and_then(|e| e.to_str()).unwrap_or("").parse()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// A `Model | Accuracy | F1` table to two decimals, closed by the human
/// reference row, then the pairwise p-values to four decimals.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    if report.models.is_empty() {
        return Err(Error::data("report has no model results to render"));
    }
    let mut rows: Vec<[String; 3]> = report
        .models
        .iter()
        .map(|r| [r.label(report), format!("{:.2}", r.accuracy), format!("{:.2}", r.f1)])
        .collect();
    rows.push([HUMAN_ROW.into(), format!("{:.2}", report.human_accuracy), "-".into()]);
    let label_of = |kind, seed| {
        report
            .models
            .iter()
            .find(|r| r.model == kind && r.seed == seed)
            .map(|r| r.label(report))
            .unwrap_or_else(|| kind.to_string())
    };
    let pairs: Vec<[String; 3]> = report
        .significance
        .iter()
        .map(|s| [label_of(s.a, s.a_seed), label_of(s.b, s.b_seed), format!("{:.4}", s.p_value)])
        .collect();

    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            out.push_str("| Model | Accuracy | F1 |\n|---|---|---|\n");
            for [m, a, f] in &rows {
                writeln!(out, "| {m} | {a} | {f} |").unwrap();
            }
            if !pairs.is_empty() {
                writeln!(out, "\nSignificance ({} resamples; {}):\n", report.n_boot, report.significance_note).unwrap();
                out.push_str("| Model A | Model B | p-value |\n|---|---|---|\n");
                for [a, b, p] in &pairs {
                    writeln!(out, "| {a} | {b} | {p} |").unwrap();
                }
            }
            let failed: Vec<_> = report.failed_stages().collect();
            if !failed.is_empty() {
                out.push_str("\nFailed stages:\n\n");
                for s in failed {
                    writeln!(out, "- {}: {}", s.stage, s.error.as_deref().unwrap_or("")).unwrap();
                }
            }
        }
        ReportFormat::Csv => {
            out.push_str("Model,Accuracy,F1\n");
            for [m, a, f] in &rows {
                writeln!(out, "{},{a},{f}", csv_field(m)).unwrap();
            }
            if !pairs.is_empty() {
                out.push_str("\nModel A,Model B,p-value\n");
                for [a, b, p] in &pairs {
                    writeln!(out, "{},{},{p}", csv_field(a), csv_field(b)).unwrap();
                }
            }
        }
    }
    Ok(out)
}
