use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MetricsReport;

/// One iteration of a loop run, flattened for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub iteration: usize,
    pub encoder_f1: f64,
    pub encoder_auc: Option<f64>,
    pub llm_f1: f64,
    pub llm_auc: Option<f64>,
    pub fused_f1: f64,
    pub fused_auc: Option<f64>,
    pub alpha: f64,
    pub text_quality: f64,
    pub best_fused_f1: f64,
}

/// Column names of the table format, in order.
pub const SERIES_COLUMNS: [&str; 10] = [
    "iteration",
    "encoder_f1",
    "encoder_auc",
    "llm_f1",
    "llm_auc",
    "fused_f1",
    "fused_auc",
    "alpha",
    "text_quality",
    "best_fused_f1",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metrics: MetricsReport,
    pub series: Vec<SeriesRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    /// Pretty JSON of the whole report.
    Document,
    /// CSV of the per-iteration series.
    Table,
}

pub fn render_report(report: &Report, format: ReportFormat) -> Result<String> {
    if report.series.is_empty() {
        return Err(Error::InvalidInput("a report needs at least one iteration".into()));
    }
    match format {
        ReportFormat::Document => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Table => {
            let mut out = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
            for row in &report.series {
                out.serialize(row).map_err(csv_err)?;
            }
            let bytes = out.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
            String::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("csv: {e}")))
        }
    }
}

pub fn emit_report(report: &Report, path: &Path, format: ReportFormat) -> Result<()> {
    let text = render_report(report, format)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(rows: usize) -> Report {
        let metrics = MetricsReport::compute(&[0, 1], &[0, 1], &[], 2).unwrap();
        let series = (0..rows)
            .map(|i| SeriesRow {
                iteration: i,
                encoder_f1: 0.5,
                encoder_auc: Some(0.75),
                llm_f1: 0.25,
                llm_auc: None,
                fused_f1: 0.625,
                fused_auc: Some(0.8),
                alpha: 0.3,
                text_quality: 0.9,
                best_fused_f1: 0.625,
            })
            .collect();
        Report { metrics, series }
    }

    #[test]
    fn single_iteration_gives_one_data_row() {
        let table = render_report(&report(1), ReportFormat::Table).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], SERIES_COLUMNS.join(","));
        assert_eq!(lines[1], "0,0.5,0.75,0.25,,0.625,0.8,0.3,0.9,0.625");
    }

    #[test]
    fn every_row_matches_the_schema() {
        let table = render_report(&report(3), ReportFormat::Table).unwrap();
        for line in table.lines() {
            assert_eq!(line.split(',').count(), SERIES_COLUMNS.len());
        }
    }

    #[test]
    fn re_emitting_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        emit_report(&report(2), &a, ReportFormat::Document).unwrap();
        emit_report(&report(2), &b, ReportFormat::Document).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let back: Report = serde_json::from_slice(&fs::read(&a).unwrap()).unwrap();
        assert_eq!(back, report(2));
    }

    #[test]
    fn empty_series_is_rejected() {
        assert!(render_report(&report(0), ReportFormat::Table).is_err());
    }
}
