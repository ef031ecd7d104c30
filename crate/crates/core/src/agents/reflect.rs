use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::prompt::{render_labels, TemplateId};
use crate::agents::session::{AgentSession, CallCategory};
use crate::error::{Error, Result};

/// One labelled prediction shown to the reflection agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub sample_id: String,
    pub truth: usize,
    pub predicted: usize,
    pub segments: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReflectionState {
    /// Running reflection per label name.
    pub per_class: BTreeMap<String, String>,
    /// Consolidated guideline, set by summarization.
    pub summary: Option<String>,
    pub iteration: Option<usize>,
}

/// Records grouped by true label, each group split into correct and
/// incorrect predictions.
pub fn render_records(records: &[ReflectionRecord], labels: &[String]) -> String {
    let mut blocks = Vec::with_capacity(labels.len());
    for (c, label) in labels.iter().enumerate() {
        let mine: Vec<&ReflectionRecord> = records.iter().filter(|r| r.truth == c).collect();
        let list = |correct: bool| {
            let lines: Vec<String> = mine
                .iter()
                .filter(|r| (r.predicted == c) == correct)
                .enumerate()
                .map(|(i, r)| {
                    let text = r.segments.join(" ");
                    if correct {
                        format!("{}. {text}", i + 1)
                    } else {
                        let predicted = labels.get(r.predicted).map_or("?", String::as_str);
                        format!("{}. [predicted {predicted}] {text}", i + 1)
                    }
                })
                .collect();
            if lines.is_empty() {
                "(none)".to_string()
            } else {
                lines.join("\n")
            }
        };
        blocks.push(format!("CLASS: {label}\ncorrect:\n{}\nincorrect:\n{}", list(true), list(false)));
    }
    blocks.join("\n\n")
}

/// `CLASS: <label>` blocks in label order, for labels that have text.
pub fn render_reflections(per_class: &BTreeMap<String, String>, labels: &[String]) -> String {
    labels
        .iter()
        .filter_map(|l| per_class.get(l).map(|t| format!("CLASS: {l}\n{t}")))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn header<'l>(line: &str, labels: &'l [String]) -> Option<&'l String> {
    let cleaned: String = line.chars().filter(|c| !matches!(c, '*' | '#' | '`')).collect();
    let lower = cleaned.trim().to_lowercase();
    let rest = lower.strip_prefix("class")?.trim_start().strip_prefix(':')?;
    let name = rest.trim().trim_matches(|c: char| !c.is_alphanumeric());
    labels.iter().find(|l| l.to_lowercase() == name)
}

/// Splits a reply into per-label blocks. A reply without any recognized
/// header is attributed in full to every label in `fallback`.
pub fn parse_reflections(reply: &str, labels: &[String], fallback: &[String]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut current: Option<&String> = None;
    let mut buf: Vec<&str> = Vec::new();
    let mut flush = |label: Option<&String>, buf: &mut Vec<&str>| {
        if let Some(l) = label {
            out.insert(l.clone(), buf.join("\n").trim().to_string());
        }
        buf.clear();
    };
    for line in reply.lines() {
        if let Some(l) = header(line, labels) {
            flush(current, &mut buf);
            current = Some(l);
        } else if current.is_some() {
            buf.push(line);
        }
    }
    flush(current, &mut buf);
    if out.is_empty() {
        let text = reply.trim().to_string();
        for l in fallback {
            out.insert(l.clone(), text.clone());
        }
    }
    out
}

fn present_labels(records: &[ReflectionRecord], labels: &[String]) -> Vec<String> {
    labels
        .iter()
        .enumerate()
        .filter(|(c, _)| records.iter().any(|r| r.truth == *c))
        .map(|(_, l)| l.clone())
        .collect()
}

impl AgentSession<'_> {
    /// Initial per-label reflections from one batch; one call.
    pub fn generate_reflection(
        &self,
        records: &[ReflectionRecord],
        labels: &[String],
    ) -> Result<BTreeMap<String, String>> {
        if records.is_empty() {
            return Err(Error::Contract("reflection needs at least one record".into()));
        }
        let fields = BTreeMap::from([
            ("labels", render_labels(labels)),
            ("records", render_records(records, labels)),
        ]);
        let messages = TemplateId::ReflectionGenerate.template().render(&fields)?;
        let reply = self.call(
            TemplateId::ReflectionGenerate,
            CallCategory::Reflect,
            messages,
            self.config.generate_temperature,
        )?;
        Ok(parse_reflections(&reply.text, labels, &present_labels(records, labels)))
    }

    /// Revises the stored reflections with a new batch; one call, skipped
    /// for an empty batch. Labels the reply does not mention keep their text.
    pub fn update_reflection(
        &self,
        state: &mut ReflectionState,
        records: &[ReflectionRecord],
        labels: &[String],
    ) -> Result<()> {
        if state.per_class.is_empty() {
            return Err(Error::Contract("update needs a prior reflection".into()));
        }
        if records.is_empty() {
            return Ok(());
        }
        let fields = BTreeMap::from([
            ("prior", render_reflections(&state.per_class, labels)),
            ("labels", render_labels(labels)),
            ("records", render_records(records, labels)),
        ]);
        let messages = TemplateId::ReflectionUpdate.template().render(&fields)?;
        let reply = self.call(
            TemplateId::ReflectionUpdate,
            CallCategory::Reflect,
            messages,
            self.config.generate_temperature,
        )?;
        state
            .per_class
            .extend(parse_reflections(&reply.text, labels, &present_labels(records, labels)));
        Ok(())
    }

    /// Consolidates the per-label reflections into one guideline; one call.
    pub fn summarize_reflections(&self, state: &mut ReflectionState, labels: &[String]) -> Result<String> {
        if state.per_class.is_empty() {
            return Err(Error::Contract("nothing to summarize".into()));
        }
        let fields = BTreeMap::from([("reflections", render_reflections(&state.per_class, labels))]);
        let messages = TemplateId::ReflectionSummarize.template().render(&fields)?;
        let reply = self.call(
            TemplateId::ReflectionSummarize,
            CallCategory::Reflect,
            messages,
            self.config.generate_temperature,
        )?;
        let summary = reply.text.trim().to_string();
        if summary.is_empty() {
            return Err(Error::Response("reflection summary is empty".into()));
        }
        state.summary = Some(summary.clone());
        Ok(summary)
    }

    /// Generate on the first batch, update on each following batch, then
    /// summarize: `⌈n / batch⌉ + 1` calls.
    pub fn reflect(&self, records: &[ReflectionRecord], labels: &[String]) -> Result<ReflectionState> {
        let mut batches = records.chunks(self.config.reflection_batch_size);
        let first = batches
            .next()
            .ok_or_else(|| Error::Contract("reflection needs at least one record".into()))?;
        let mut state = ReflectionState {
            per_class: self.generate_reflection(first, labels)?,
            ..Default::default()
        };
        for batch in batches {
            self.update_reflection(&mut state, batch, labels)?;
        }
        self.summarize_reflections(&mut state, labels)?;
        Ok(state)
    }
}
