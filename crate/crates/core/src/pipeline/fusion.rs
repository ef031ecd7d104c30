use serde::{Deserialize, Serialize};

use crate::agents::LabelPrediction;
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::numerics::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Weight of the encoder probabilities; `1 − alpha` goes to the LLM.
    pub alpha: f64,
    /// Explanations shown to the prediction LLM.
    pub omega: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { alpha: 1.0, omega: 3 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha = {} is outside [0, 1]", self.alpha)));
        }
        if self.omega == 0 {
            return Err(Error::InvalidConfig("omega must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// `alpha · encoder + (1 − alpha) · onehot(llm)`. A failed LLM prediction
/// leaves the encoder probabilities unchanged.
pub fn fuse_predictions(encoder: &[f64], llm: Option<usize>, alpha: f64) -> Vec<f64> {
    match llm {
        Some(class) if class < encoder.len() => encoder
            .iter()
            .enumerate()
            .map(|(c, p)| alpha * p + if c == class { 1.0 - alpha } else { 0.0 })
            .collect(),
        _ => {
            tracing::debug!("no usable LLM label; fused prediction falls back to the encoder");
            encoder.to_vec()
        }
    }
}

/// One validation sample as seen by α selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRecord {
    pub encoder: Vec<f64>,
    pub llm: Option<usize>,
    pub truth: usize,
}

impl FusionRecord {
    pub fn new(encoder: Vec<f64>, llm: &LabelPrediction, truth: usize) -> Self {
        Self {
            encoder,
            llm: llm.class,
            truth,
        }
    }
}

/// Fused metrics of `records` at one α.
pub fn fused_metrics(records: &[FusionRecord], alpha: f64, classes: usize) -> Result<MetricsReport> {
    let scores: Vec<Vec<f64>> = records
        .iter()
        .map(|r| fuse_predictions(&r.encoder, r.llm, alpha))
        .collect();
    let preds: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    let truth: Vec<usize> = records.iter().map(|r| r.truth).collect();
    MetricsReport::compute(&truth, &preds, &scores, classes)
}

pub const ALPHA_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Grid search over [`ALPHA_GRID`] for the best fused macro-F1; ties go to
/// the higher fused AUC, then to the larger α.
pub fn select_alpha(records: &[FusionRecord], classes: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidInput("alpha selection needs validation records".into()));
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for &alpha in ALPHA_GRID.iter().rev() {
        let m = fused_metrics(records, alpha, classes)?;
        let auc = m.auc.unwrap_or(f64::NEG_INFINITY);
        let better = match best {
            None => true,
            Some((_, f1, best_auc)) => m.macro_f1 > f1 || (m.macro_f1 == f1 && auc > best_auc),
        };
        if better {
            best = Some((alpha, m.macro_f1, auc));
        }
    }
    Ok(best.map(|(a, _, _)| a).unwrap_or(1.0))
}
