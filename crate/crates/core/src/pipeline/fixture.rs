//! Small dataset and scripted agents shared by the pipeline tests.

use std::collections::BTreeMap;

use crate::agents::{AgentSession, Response, Rule, Script, ScriptedClient, TemplateId};
use crate::data::synth::NOISE_TOKENS;
use crate::data::{prepare_splits, synthesize_dataset, DatasetManifest, EmbeddingCache, HashEmbedder, Splits, SyntheticSpec};
use crate::pipeline::{LoopConfig, Runtime};

pub struct Fixture {
    pub manifest: DatasetManifest,
    pub splits: Splits,
    pub config: LoopConfig,
    pub embedder: HashEmbedder,
    pub cache: EmbeddingCache,
}

pub fn fixture(samples: usize, corruption: f64) -> Fixture {
    let spec = SyntheticSpec {
        num_samples: samples,
        time_steps: 24,
        motif_length: 8,
        motif_amplitude: 0.5,
        segments_per_sample: 4,
        hint_corruption_rate: corruption,
        ..Default::default()
    };
    let (manifest, data) = synthesize_dataset(&spec).unwrap();
    let (manifest, splits) = prepare_splits(&manifest, data, 1).unwrap();
    let mut config = LoopConfig::default();
    config.encoder.epochs = 3;
    config.encoder.time_kernel = 4;
    config.encoder.time_prototypes = 2;
    config.encoder.text_prototypes = 2;
    config.embedding_dim = 16;
    config.early_stop = None;
    config.conform_to(&manifest);
    Fixture {
        manifest,
        splits,
        config,
        embedder: HashEmbedder::new(16),
        cache: EmbeddingCache::in_memory(),
    }
}

pub fn vocabulary() -> BTreeMap<String, Vec<String>> {
    let spec = SyntheticSpec::default();
    spec.class_names.iter().cloned().zip(spec.class_vocabulary()).collect()
}

pub fn rule(template: TemplateId, respond: Response) -> Rule {
    Rule {
        template: Some(template),
        contains: None,
        respond,
    }
}

/// Text voting predictions, fixed reflections and the given refinement.
pub fn script(refine: Response) -> ScriptedClient {
    let vote = |section: &str| Response::Vote {
        section: section.into(),
        vocabulary: vocabulary(),
        invert: false,
        seed: 1,
    };
    ScriptedClient::new(Script {
        model: "scripted".into(),
        rules: vec![
            rule(TemplateId::Prediction, vote("EXPLANATIONS")),
            rule(TemplateId::PredictionTextOnly, vote("TEXT")),
            rule(
                TemplateId::ReflectionGenerate,
                Response::Text {
                    text: "CLASS: down\nnoise words mislead.".into(),
                },
            ),
            rule(
                TemplateId::ReflectionUpdate,
                Response::Text {
                    text: "CLASS: up\nrevision notes matter.".into(),
                },
            ),
            rule(
                TemplateId::ReflectionSummarize,
                Response::Text {
                    text: "Delete noise words and apply revision notes.".into(),
                },
            ),
            rule(TemplateId::Refinement, refine),
        ],
    })
}

pub fn cleaning() -> Response {
    Response::Refine {
        drop_tokens: NOISE_TOKENS.iter().map(|s| s.to_string()).collect(),
        drop_segments_with: vec![],
        restore_probability: 0.8,
        marker: "revised".into(),
        seed: 5,
    }
}

pub fn identity() -> Response {
    Response::Echo { section: "TEXT".into() }
}

impl Fixture {
    pub fn runtime<'a>(&'a self, session: &'a AgentSession<'a>) -> Runtime<'a> {
        Runtime {
            labels: &self.manifest.label_names,
            policy: self.manifest.segmentation,
            embedder: &self.embedder,
            cache: &self.cache,
            session,
        }
    }
}
