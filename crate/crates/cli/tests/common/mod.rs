#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use protofuse::agents::{Response, Rule, Script, TemplateId};
use protofuse::data::synth::NOISE_TOKENS;
use protofuse::data::SyntheticSpec;

pub fn vocabulary(spec: &SyntheticSpec) -> BTreeMap<String, Vec<String>> {
    spec.class_names.iter().cloned().zip(spec.class_vocabulary()).collect()
}

pub fn rule(template: TemplateId, respond: Response) -> Rule {
    Rule {
        template: Some(template),
        contains: None,
        respond,
    }
}

pub fn vote(section: &str, vocabulary: &BTreeMap<String, Vec<String>>, invert: bool, seed: u64) -> Response {
    Response::Vote {
        section: section.into(),
        vocabulary: vocabulary.clone(),
        invert,
        seed,
    }
}

/// Votes on explanations when given them and on the text otherwise;
/// reflection returns fixed guidance and refinement deletes noise tokens
/// and applies revision notes with probability 0.8.
pub fn loop_script(vocabulary: &BTreeMap<String, Vec<String>>) -> Script {
    let text = |t: &str| Response::Text { text: t.into() };
    let classes: Vec<&String> = vocabulary.keys().collect();
    let per_class: String = classes
        .iter()
        .map(|c| format!("CLASS: {c}\nfiller words and noise tokens carry no signal.\n"))
        .collect();
    Script {
        model: "scripted".into(),
        rules: vec![
            rule(TemplateId::Prediction, vote("EXPLANATIONS", vocabulary, false, 1)),
            rule(TemplateId::PredictionTextOnly, vote("TEXT", vocabulary, false, 2)),
            rule(TemplateId::ReflectionGenerate, text(&per_class)),
            rule(TemplateId::ReflectionUpdate, text(&per_class)),
            rule(
                TemplateId::ReflectionSummarize,
                text("Delete noise tokens and apply every revision note to the outlook it revises."),
            ),
            rule(
                TemplateId::Refinement,
                Response::Refine {
                    drop_tokens: NOISE_TOKENS.iter().map(|s| s.to_string()).collect(),
                    drop_segments_with: Vec::new(),
                    restore_probability: 0.8,
                    marker: "revised".into(),
                    seed: 5,
                },
            ),
        ],
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

pub fn protofuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protofuse"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn path_arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}
