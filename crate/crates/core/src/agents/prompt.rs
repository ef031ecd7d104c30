//! Prompt templates.
//!
//! Bodies use `{{name}}` placeholders. Variable content is wrapped in
//! `<<NAME>>` / `<</NAME>>` section markers so that both humans and the
//! scripted client can find it again in a rendered prompt.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::client::Message;
use crate::encoder::{Explanation, ExplanationItem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateId {
    Prediction,
    PredictionTextOnly,
    PredictionRegression,
    ReflectionGenerate,
    ReflectionUpdate,
    ReflectionSummarize,
    Refinement,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::Prediction,
        TemplateId::PredictionTextOnly,
        TemplateId::PredictionRegression,
        TemplateId::ReflectionGenerate,
        TemplateId::ReflectionUpdate,
        TemplateId::ReflectionSummarize,
        TemplateId::Refinement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::Prediction => "prediction",
            TemplateId::PredictionTextOnly => "prediction-text-only",
            TemplateId::PredictionRegression => "prediction-regression",
            TemplateId::ReflectionGenerate => "reflection-generate",
            TemplateId::ReflectionUpdate => "reflection-update",
            TemplateId::ReflectionSummarize => "reflection-summarize",
            TemplateId::Refinement => "refinement",
        }
    }

    pub fn template(self) -> PromptTemplate {
        let body = match self {
            TemplateId::Prediction => PREDICTION,
            TemplateId::PredictionTextOnly => PREDICTION_TEXT_ONLY,
            TemplateId::PredictionRegression => PREDICTION_REGRESSION,
            TemplateId::ReflectionGenerate => REFLECTION_GENERATE,
            TemplateId::ReflectionUpdate => REFLECTION_UPDATE,
            TemplateId::ReflectionSummarize => REFLECTION_SUMMARIZE,
            TemplateId::Refinement => REFINEMENT,
        };
        PromptTemplate {
            id: self,
            system: SYSTEM,
            body,
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemplateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown template `{s}`")))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub system: &'static str,
    pub body: &'static str,
}

impl PromptTemplate {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut rest = self.body;
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else { break };
            let name = &after[..end];
            if !out.contains(&name) {
                out.push(name);
            }
            rest = &after[end + 2..];
        }
        out
    }

    /// Substitutes every placeholder in one pass; values are not rescanned.
    pub fn render(&self, fields: &BTreeMap<&str, String>) -> Result<Vec<Message>> {
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or_else(|| Error::Render(format!("unterminated placeholder in {}", self.id)))?;
            let name = &after[..end];
            let value = fields.get(name).ok_or_else(|| Error::Render(name.to_string()))?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(vec![Message::system(self.system), Message::user(out)])
    }
}

/// Content of the `name` section of a rendered prompt, if present.
pub fn section<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    let open = format!("<<{name}>>\n");
    let close = format!("\n<</{name}>>");
    let start = prompt.find(&open)? + open.len();
    let len = prompt[start..].find(&close)?;
    Some(&prompt[start..start + len])
}

pub fn render_labels(labels: &[String]) -> String {
    labels.join(", ")
}

/// One segment per line.
pub fn render_text(segments: &[String]) -> String {
    segments.join("\n")
}

pub fn render_explanation_item(rank: usize, labels: &[String], item: &ExplanationItem) -> String {
    let class = labels.get(item.class).map_or("?", String::as_str);
    format!(
        "{rank}. prototype ({class}): \"{}\" ↔ segment {}: \"{}\" ({:.4})",
        item.prototype_content.render(),
        item.segment,
        item.segment_content.render(),
        item.score
    )
}

/// Numbered `prototype (class) ↔ matched segment (score)` lines.
pub fn render_explanations(labels: &[String], explanation: &Explanation) -> String {
    explanation
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| render_explanation_item(i + 1, labels, item))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_series(series: &[Vec<f64>]) -> String {
    series
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            let values: Vec<String> = ch.iter().map(|v| format!("{v:.3}")).collect();
            format!("channel {c}: {}", values.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

const SYSTEM: &str = "You are an expert analyst of time series and the text reports that accompany them.";

const PREDICTION: &str = "\
Predict the label of a time series sample from its text report.

Possible labels:
<<LABELS>>
{{labels}}
<</LABELS>>

Report:
<<TEXT>>
{{text}}
<</TEXT>>

Case-based explanations. Each line pairs a prototype learned from training data of a known label with the report segment it matches most closely, and their similarity:
<<EXPLANATIONS>>
{{explanations}}
<</EXPLANATIONS>>

Weigh the report against the explanations and decide which label they support. End your reply with one line of the form
ANSWER: <label>";

const PREDICTION_TEXT_ONLY: &str = "\
Predict the label of a time series sample from its text report.

Possible labels:
<<LABELS>>
{{labels}}
<</LABELS>>

Report:
<<TEXT>>
{{text}}
<</TEXT>>

Decide which label the report supports. End your reply with one line of the form
ANSWER: <label>";

const PREDICTION_REGRESSION: &str = "\
Predict the continuous target value of a time series sample from its recent values and text report.

Series:
<<SERIES>>
{{series}}
<</SERIES>>

Report:
<<TEXT>>
{{text}}
<</TEXT>>

Case-based explanations:
<<EXPLANATIONS>>
{{explanations}}
<</EXPLANATIONS>>

End your reply with one line of the form
ANSWER: <number>";

const REFLECTION_GENERATE: &str = "\
A predictor labelled the training reports below. They are grouped by true label and split into correct and incorrect predictions.

Labels:
<<LABELS>>
{{labels}}
<</LABELS>>

<<RECORDS>>
{{records}}
<</RECORDS>>

For each label, reflect on which text patterns led to correct predictions and which misled the predictor. Give actionable guidance for rewriting reports so that the relevant evidence stands out. Write one block per label, each starting with a line `CLASS: <label>`.";

const REFLECTION_UPDATE: &str = "\
You previously wrote these reflections on how reports relate to their labels:
<<PRIOR>>
{{prior}}
<</PRIOR>>

Labels:
<<LABELS>>
{{labels}}
<</LABELS>>

Here is a new batch of labelled training reports, grouped by true label and split into correct and incorrect predictions:
<<RECORDS>>
{{records}}
<</RECORDS>>

Update the reflections with what the new batch teaches. Keep insights that still hold and revise those that do not. Write one block per label, each starting with a line `CLASS: <label>`.";

const REFLECTION_SUMMARIZE: &str = "\
Consolidate the per-label reflections below into one guideline for rewriting reports so that the evidence for the correct label is easy to see.
<<REFLECTIONS>>
{{reflections}}
<</REFLECTIONS>>

Reply with the guideline only.";

const REFINEMENT: &str = "\
Rewrite the report following the guideline. Select and emphasize the content that is relevant to the label, drop content that is irrelevant or misleading, and do not invent facts.

Guideline:
<<REFLECTION>>
{{reflection}}
<</REFLECTION>>

Report:
<<TEXT>>
{{text}}
<</TEXT>>

Reply with the rewritten report only, as complete sentences.";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_template_lists_its_placeholders() {
        for id in TemplateId::ALL {
            assert!(!id.template().placeholders().is_empty(), "{id}");
            assert_eq!(id.name().parse::<TemplateId>().unwrap(), id);
        }
    }

    #[test]
    fn missing_placeholder_is_named() {
        let fields = BTreeMap::from([("labels", "a, b".to_string())]);
        match TemplateId::PredictionTextOnly.template().render(&fields) {
            Err(Error::Render(name)) => assert_eq!(name, "text"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn values_are_not_rescanned() {
        let fields = BTreeMap::from([
            ("labels", "a, b".to_string()),
            ("text", "curly {{labels}} stays".to_string()),
        ]);
        let msgs = TemplateId::PredictionTextOnly.template().render(&fields).unwrap();
        assert_eq!(section(&msgs[1].content, "TEXT"), Some("curly {{labels}} stays"));
    }

    #[test]
    fn sections_round_trip() {
        let fields = BTreeMap::from([
            ("labels", "a, b".to_string()),
            ("text", "one.\ntwo.".to_string()),
        ]);
        let msgs = TemplateId::PredictionTextOnly.template().render(&fields).unwrap();
        assert_eq!(section(&msgs[1].content, "TEXT"), Some("one.\ntwo."));
        assert_eq!(section(&msgs[1].content, "LABELS"), Some("a, b"));
        assert_eq!(section(&msgs[1].content, "EXPLANATIONS"), None);
    }
}
