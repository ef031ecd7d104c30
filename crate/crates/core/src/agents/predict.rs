use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::client::Message;
use crate::agents::prompt::{render_explanations, render_labels, render_series, render_text, TemplateId};
use crate::agents::session::{AgentSession, CallCategory};
use crate::encoder::Explanation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPrediction {
    /// Index into the label set; set iff `status` is ok.
    pub class: Option<usize>,
    pub label: Option<String>,
    pub raw: String,
    pub status: ParseStatus,
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePrediction {
    pub value: Option<f64>,
    pub raw: String,
    pub status: ParseStatus,
    pub attempts: usize,
}

/// The value of the last `ANSWER:` line, case-insensitive, ignoring
/// markdown emphasis and quotes.
pub fn answer_value(response: &str) -> Option<String> {
    response.lines().rev().find_map(|line| {
        let cleaned: String = line.chars().filter(|c| !matches!(c, '*' | '`' | '"' | '\'' | '#')).collect();
        let cleaned = cleaned.trim();
        let lower = cleaned.to_lowercase();
        let rest = lower.strip_prefix("answer")?.trim_start();
        let rest = rest.strip_prefix(':')?;
        Some(rest.trim().to_string())
    })
}

fn normalize_label(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Label index named on the last answer line.
pub fn parse_label(response: &str, labels: &[String]) -> Option<usize> {
    let value = normalize_label(&answer_value(response)?);
    labels.iter().position(|l| normalize_label(l) == value)
}

pub fn parse_value(response: &str) -> Option<f64> {
    let value = answer_value(response)?;
    let token = value.split_whitespace().next()?;
    let token = token.trim_end_matches(|c: char| !c.is_ascii_digit());
    token.replace(',', "").parse::<f64>().ok().filter(|v| v.is_finite())
}

impl AgentSession<'_> {
    /// Label prediction from the text and, when non-empty, its case-based
    /// explanations; an empty or missing explanation renders the text-only
    /// prompt. An unparseable answer is retried with a format reminder;
    /// after the last retry the prediction is returned with status failed.
    pub fn predict(
        &self,
        segments: &[String],
        explanation: Option<&Explanation>,
        labels: &[String],
    ) -> Result<LabelPrediction> {
        self.predict_as(CallCategory::Predict, segments, explanation, labels)
    }

    /// Text-only prediction booked under the probe category.
    pub fn probe(&self, segments: &[String], labels: &[String]) -> Result<LabelPrediction> {
        self.predict_as(CallCategory::Probe, segments, None, labels)
    }

    fn predict_as(
        &self,
        category: CallCategory,
        segments: &[String],
        explanation: Option<&Explanation>,
        labels: &[String],
    ) -> Result<LabelPrediction> {
        if labels.is_empty() {
            return Err(Error::Contract("prediction needs a non-empty label set".into()));
        }
        let mut fields = BTreeMap::from([
            ("labels", render_labels(labels)),
            ("text", render_text(self.fit_to_budget(segments))),
        ]);
        let template = match explanation.filter(|e| !e.items.is_empty()) {
            Some(e) => {
                fields.insert("explanations", render_explanations(labels, e));
                TemplateId::Prediction
            }
            None => TemplateId::PredictionTextOnly,
        };
        let reminder = format!(
            "Your reply did not end with a valid answer line. Reply with exactly one line of the form `ANSWER: <label>`, where <label> is one of:\n<<LABELS>>\n{}\n<</LABELS>>",
            render_labels(labels)
        );
        let (raw, attempts, class) =
            self.ask(template, category, &fields, &reminder, |r| parse_label(r, labels))?;
        Ok(LabelPrediction {
            class,
            label: class.map(|c| labels[c].clone()),
            raw,
            status: if class.is_some() { ParseStatus::Ok } else { ParseStatus::Failed },
            attempts,
        })
    }

    /// Continuous-value prediction from the series, text and explanations.
    pub fn predict_value(
        &self,
        series: &[Vec<f64>],
        segments: &[String],
        explanation: Option<&Explanation>,
    ) -> Result<ValuePrediction> {
        let explanations = explanation.map_or_else(String::new, |e| render_explanations(&[], e));
        let fields = BTreeMap::from([
            ("series", render_series(series)),
            ("text", render_text(self.fit_to_budget(segments))),
            ("explanations", explanations),
        ]);
        let reminder = "Your reply did not end with a valid answer line. Reply with exactly one line of the form `ANSWER: <number>`.";
        let (raw, attempts, value) = self.ask(
            TemplateId::PredictionRegression,
            CallCategory::Predict,
            &fields,
            reminder,
            parse_value,
        )?;
        Ok(ValuePrediction {
            value,
            raw,
            status: if value.is_some() { ParseStatus::Ok } else { ParseStatus::Failed },
            attempts,
        })
    }

    fn ask<T>(
        &self,
        template: TemplateId,
        category: CallCategory,
        fields: &BTreeMap<&str, String>,
        reminder: &str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<(String, usize, Option<T>)> {
        let mut messages = template.template().render(fields)?;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let reply = self.call(template, category, messages.clone(), self.config.predict_temperature)?;
            if let Some(v) = parse(&reply.text) {
                return Ok((reply.text, attempts, Some(v)));
            }
            if attempts > self.config.format_retries {
                tracing::warn!(%template, attempts, "no parseable answer");
                return Ok((reply.text, attempts, None));
            }
            messages.push(Message::assistant(reply.text));
            messages.push(Message::user(reminder));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::scripted::{Response, ScriptedClient};
    use crate::agents::session::AgentConfig;

    fn labels() -> Vec<String> {
        vec!["rain".into(), "not-rain".into()]
    }

    #[test]
    fn answer_parsing_is_lenient_about_case_and_punctuation() {
        assert_eq!(parse_label("ANSWER: rain", &labels()), Some(0));
        assert_eq!(parse_label("answer: RAIN", &labels()), Some(0));
        assert_eq!(parse_label("reasoning...\n**Answer:** not-rain.", &labels()), Some(1));
        assert_eq!(parse_label("Answer : \"rain\"", &labels()), Some(0));
    }

    #[test]
    fn last_answer_line_wins() {
        assert_eq!(parse_label("ANSWER: rain\nwait\nANSWER: not-rain", &labels()), Some(1));
        assert_eq!(parse_label("ANSWER: rain\nANSWER: snow", &labels()), None);
    }

    #[test]
    fn never_returns_an_unknown_label() {
        for r in ["ANSWER: snow", "rain", "", "ANSWER:", "the answer is rain"] {
            assert_eq!(parse_label(r, &labels()), None, "{r}");
        }
    }

    #[test]
    fn value_parsing() {
        assert_eq!(parse_value("ANSWER: 3.25"), Some(3.25));
        assert_eq!(parse_value("so\nanswer: -1,200.5 units"), Some(-1200.5));
        assert_eq!(parse_value("ANSWER: about ten"), None);
    }

    #[test]
    fn scripted_answer_is_parsed() {
        let client = ScriptedClient::always(Response::Text { text: "ANSWER: rain".into() });
        let s = AgentSession::new(&client, AgentConfig::default()).unwrap();
        let p = s.predict(&["clouds.".into()], None, &labels()).unwrap();
        assert_eq!((p.class, p.status, p.attempts), (Some(0), ParseStatus::Ok, 1));
        assert_eq!(p.label.as_deref(), Some("rain"));
    }

    #[test]
    fn prose_twice_fails_after_one_retry() {
        let client = ScriptedClient::always(Response::Text { text: "It may rain.".into() });
        let s = AgentSession::new(&client, AgentConfig::default()).unwrap();
        let p = s.predict(&["clouds.".into()], None, &labels()).unwrap();
        assert_eq!((p.class, p.status, p.attempts), (None, ParseStatus::Failed, 2));
        assert_eq!(client.calls(), 2);
    }

    #[test]
    fn retry_can_recover() {
        let client = ScriptedClient::always(Response::Sequence {
            texts: vec!["hmm".into(), "ANSWER: not-rain".into()],
        });
        let s = AgentSession::new(&client, AgentConfig::default()).unwrap();
        let p = s.predict(&["clouds.".into()], None, &labels()).unwrap();
        assert_eq!((p.class, p.attempts), (Some(1), 2));
    }

    #[test]
    fn empty_label_set_is_rejected() {
        let client = ScriptedClient::always(Response::Text { text: "ANSWER: x".into() });
        let s = AgentSession::new(&client, AgentConfig::default()).unwrap();
        assert!(s.predict(&["a.".into()], None, &[]).is_err());
    }
}
