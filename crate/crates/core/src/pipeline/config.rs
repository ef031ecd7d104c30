use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agents::AgentConfig;
use crate::data::DatasetManifest;
use crate::encoder::{EncoderConfig, Modality};
use crate::error::{Error, Result};
use crate::pipeline::fusion::FusionConfig;

/// Which predictions label the training records handed to reflection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReflectionSource {
    /// Encoder predictions; costs no extra LLM calls.
    #[default]
    Encoder,
    /// One extra prediction call per training sample.
    Llm,
}

/// Stop once the best fused F1 has improved by less than `epsilon` for
/// `patience` consecutive iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    #[serde(serialize_with = "write_threshold", deserialize_with = "read_threshold")]
    pub epsilon: f64,
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            epsilon: 0.002,
            patience: 1,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Threshold {
    Number(f64),
    Named(String),
}

fn write_threshold<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        Threshold::Named("inf".into()).serialize(s)
    } else {
        Threshold::Number(*v).serialize(s)
    }
}

fn read_threshold<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    match Threshold::deserialize(d)? {
        Threshold::Number(v) => Ok(v),
        Threshold::Named(s) if s.eq_ignore_ascii_case("inf") => Ok(f64::INFINITY),
        Threshold::Named(s) => Err(serde::de::Error::custom(format!(
            "expected a number or \"inf\", found \"{s}\""
        ))),
    }
}

/// Everything that drives one loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub encoder: EncoderConfig,
    pub agents: AgentConfig,
    pub fusion: FusionConfig,
    /// Maximum iterations `τ`.
    pub max_iterations: usize,
    /// `None` runs all `τ` iterations.
    pub early_stop: Option<EarlyStop>,
    /// Keep the text of samples whose prediction was already correct.
    pub selective_refinement: bool,
    pub reflection_source: ReflectionSource,
    /// Modality of the explanations shown to the prediction LLM.
    pub explanation_modality: Modality,
    /// Dimension of the built-in hash embedder.
    pub embedding_dim: usize,
    /// Seed for splitting untagged datasets.
    pub split_seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            agents: AgentConfig::default(),
            fusion: FusionConfig::default(),
            max_iterations: 3,
            early_stop: Some(EarlyStop::default()),
            selective_refinement: false,
            reflection_source: ReflectionSource::default(),
            explanation_modality: Modality::Text,
            embedding_dim: 64,
            split_seed: 7,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.agents.validate()?;
        self.fusion.validate()?;
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be ≥ 1".into()));
        }
        if let Some(stop) = &self.early_stop {
            if stop.patience == 0 || stop.epsilon.is_nan() {
                return Err(Error::InvalidConfig(
                    "early stop needs patience ≥ 1 and a numeric epsilon".into(),
                ));
            }
        }
        if self.embedding_dim == 0 {
            return Err(Error::InvalidConfig("embedding_dim must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Copies the data-determined shapes into the encoder configuration.
    pub fn conform_to(&mut self, manifest: &DatasetManifest) {
        conform_encoder(&mut self.encoder, manifest, self.embedding_dim);
    }
}

/// Sets class count, channels, steps and embedding width from the data.
pub fn conform_encoder(config: &mut EncoderConfig, manifest: &DatasetManifest, embedding_dim: usize) {
    config.classes = manifest.num_classes();
    config.channels = manifest.channels;
    config.time_steps = manifest.time_steps;
    config.embedding_dim = embedding_dim;
}
