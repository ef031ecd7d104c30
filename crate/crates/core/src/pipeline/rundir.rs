use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::agents::{Transcript, UsageLedger};
use crate::error::{Error, Result};
use crate::eval::{emit_report, Report, ReportFormat, SeriesRow};
use crate::persist::write_json;
use crate::pipeline::state::{save_checkpoint, Checkpoint, IterationReport};
use crate::pipeline::test_phase::TestOutcome;

/// File layout of one run.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::InvalidInput(format!("run directory {} does not exist", root.display())));
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.json")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model.json")
    }

    pub fn transcript(&self) -> PathBuf {
        self.root.join("transcript.jsonl")
    }

    pub fn embedding_cache(&self) -> PathBuf {
        self.root.join("embeddings.cache")
    }

    /// Where the data and client of the run are recorded.
    pub fn info(&self) -> PathBuf {
        self.root.join("run.json")
    }

    pub fn usage(&self) -> PathBuf {
        self.root.join("usage.json")
    }

    pub fn iteration(&self, i: usize) -> PathBuf {
        self.root.join("iterations").join(format!("iteration-{i:03}.json"))
    }

    pub fn report(&self, format: ReportFormat) -> PathBuf {
        match format {
            ReportFormat::Document => self.root.join("report.json"),
            ReportFormat::Table => self.root.join("report.csv"),
        }
    }

    pub fn test_predictions(&self) -> PathBuf {
        self.root.join("test").join("predictions.jsonl")
    }

    pub fn test_metrics(&self) -> PathBuf {
        self.root.join("test").join("metrics.json")
    }

    pub fn open_transcript(&self) -> Result<Transcript> {
        Transcript::open(&self.transcript())
    }

    pub fn write_config<T: Serialize>(&self, config: &T) -> Result<()> {
        write_json(&self.config(), config)
    }

    pub fn write_iteration(&self, report: &IterationReport) -> Result<()> {
        write_json(&self.iteration(report.iteration), report)
    }

    pub fn write_checkpoint(&self, checkpoint: &Checkpoint) -> Result<()> {
        save_checkpoint(&self.checkpoint(), checkpoint)
    }

    /// Token counts and wall time per call category.
    pub fn write_usage(&self, ledger: &UsageLedger) -> Result<()> {
        let doc = serde_json::json!({
            "tokens": ledger.tokens(),
            "wall_ms": ledger.wall_ms(),
        });
        write_json(&self.usage(), &doc)
    }

    /// Document and table forms of the per-iteration series; the headline
    /// metrics are the fused validation metrics of the best iteration.
    pub fn write_report(&self, reports: &[IterationReport]) -> Result<()> {
        let report = series_report(reports)?;
        for format in [ReportFormat::Document, ReportFormat::Table] {
            emit_report(&report, &self.report(format), format)?;
        }
        Ok(())
    }

    pub fn write_test(&self, outcome: &TestOutcome) -> Result<()> {
        let path = self.test_predictions();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        for record in &outcome.records {
            writeln!(out, "{}", serde_json::to_string(record)?).map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
        let metrics = serde_json::json!({
            "alpha": outcome.alpha,
            "encoder": outcome.encoder,
            "llm": outcome.llm,
            "fused": outcome.fused,
        });
        write_json(&self.test_metrics(), &metrics)
    }
}

pub fn series_report(reports: &[IterationReport]) -> Result<Report> {
    // reversed so that `max_by` keeps the earliest of equal maxima
    let best = reports
        .iter()
        .rev()
        .max_by(|a, b| a.fused.macro_f1.total_cmp(&b.fused.macro_f1))
        .ok_or_else(|| Error::InvalidInput("no iterations to report".into()))?;
    let series = reports
        .iter()
        .map(|r| SeriesRow {
            iteration: r.iteration,
            encoder_f1: r.encoder.macro_f1,
            encoder_auc: r.encoder.auc,
            llm_f1: r.llm.macro_f1,
            llm_auc: r.llm.auc,
            fused_f1: r.fused.macro_f1,
            fused_auc: r.fused.auc,
            alpha: r.alpha,
            text_quality: r.text_quality,
            best_fused_f1: r.best_fused_f1,
        })
        .collect();
    Ok(Report {
        metrics: best.fused.clone(),
        series,
    })
}
