use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{CallCategory, ReflectionState, TokenUsage};
use crate::data::MultiModalSample;
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::persist::{read_envelope, write_envelope};
use crate::pipeline::config::LoopConfig;
use crate::pipeline::fusion::FusionConfig;

pub const CHECKPOINT_FORMAT: &str = "protofuse-loop";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Encoder and reflection of the best iteration; always replaced together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestState {
    pub iteration: usize,
    pub model: EncoderModel,
    pub reflection: ReflectionState,
    /// α selected on validation in that iteration, with the loop's ω.
    pub fusion: FusionConfig,
    pub fused_f1: f64,
}

impl BestState {
    /// The summarized guideline used for refinement.
    pub fn guideline(&self) -> Result<&str> {
        self.reflection
            .summary
            .as_deref()
            .ok_or_else(|| Error::Contract("best reflection has no summary".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    /// Iterations completed.
    pub iteration: usize,
    pub max_iterations: usize,
    /// Current text of every training and validation sample, by id.
    pub texts: BTreeMap<String, Vec<String>>,
    /// Encoder trained in the most recent iteration.
    pub model: Option<EncoderModel>,
    pub best: Option<BestState>,
    /// Fused validation macro-F1 of each completed iteration.
    pub history: Vec<f64>,
    /// Consecutive iterations whose best-F1 gain fell below the early-stop
    /// threshold.
    pub stalled: usize,
    /// Ids whose most recent prediction was correct; used by selective
    /// refinement.
    pub correct: BTreeSet<String>,
}

impl LoopState {
    /// `s_0`: the original texts.
    pub fn initial(train: &[MultiModalSample], val: &[MultiModalSample], max_iterations: usize) -> Result<Self> {
        let mut texts = BTreeMap::new();
        for s in train.iter().chain(val) {
            if texts.insert(s.id.clone(), s.segments.clone()).is_some() {
                return Err(Error::InvalidInput(format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(Self {
            iteration: 0,
            max_iterations,
            texts,
            model: None,
            best: None,
            history: Vec::new(),
            stalled: 0,
            correct: BTreeSet::new(),
        })
    }

    pub fn best_f1(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.fused_f1)
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.max_iterations
    }

    /// Copies of `samples` carrying their current text.
    pub fn apply_texts(&self, samples: &[MultiModalSample]) -> Vec<MultiModalSample> {
        samples
            .iter()
            .map(|s| {
                let mut s = s.clone();
                if let Some(text) = self.texts.get(&s.id) {
                    s.set_segments(text.clone());
                }
                s
            })
            .collect()
    }
}

/// Validation outcome of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub encoder: MetricsReport,
    /// Failed LLM answers count as the encoder's label.
    pub llm: MetricsReport,
    pub fused: MetricsReport,
    pub alpha: f64,
    /// Zero-shot LLM accuracy on this iteration's validation texts.
    pub text_quality: f64,
    pub llm_failures: usize,
    pub improved: bool,
    /// Best fused macro-F1 after this iteration.
    pub best_fused_f1: f64,
    pub best_iteration: usize,
    pub refined: usize,
    pub refine_fallbacks: usize,
    pub refine_skipped: usize,
    pub encoder_best_epoch: usize,
    pub usage: BTreeMap<CallCategory, TokenUsage>,
}

/// Configuration and state, persisted together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: LoopConfig,
    pub state: LoopState,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_envelope(path, CHECKPOINT_FORMAT, CHECKPOINT_VERSION, checkpoint)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let cp: Checkpoint = read_envelope(path, CHECKPOINT_FORMAT, CHECKPOINT_VERSION)?;
    cp.config.validate()?;
    for model in cp.state.model.iter().chain(cp.state.best.as_ref().map(|b| &b.model)) {
        model.check_shapes()?;
    }
    Ok(cp)
}
