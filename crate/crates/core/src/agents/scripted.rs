//! Deterministic rule-based client for tests and offline runs.
//!
//! A script is an ordered list of rules. The first rule whose template and
//! substring matcher accept the request produces the response. Any
//! randomness (guesses, probabilistic rewrites) is derived from a hash of
//! the prompt, so a response depends only on the request and the script,
//! plus a per-rule counter for `sequence` rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::client::{Completion, CompletionRequest, LlmClient, Usage};
use crate::agents::prompt::{section, TemplateId};
use crate::data::embed::tokenize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default = "default_model")]
    pub model: String,
    pub rules: Vec<Rule>,
}

fn default_model() -> String {
    "scripted".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    /// Matches any template when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<TemplateId>,
    /// Substring the rendered prompt must contain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub respond: Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Response {
    /// A canned reply.
    Text { text: String },
    /// Canned replies used in turn, wrapping around.
    Sequence { texts: Vec<String> },
    /// The named prompt section, verbatim.
    Echo { section: String },
    /// `ANSWER: <label>` for the label whose indicator tokens occur most
    /// often in `section`; a hash-seeded guess when the section is missing,
    /// holds no indicator token, or ties. `invert` answers the next label
    /// instead of the winner.
    Vote {
        section: String,
        vocabulary: BTreeMap<String, Vec<String>>,
        #[serde(default)]
        invert: bool,
        #[serde(default)]
        seed: u64,
    },
    /// `ANSWER: <label>` drawn from the prompt hash.
    Guess {
        #[serde(default)]
        seed: u64,
    },
    /// Rewrites the `TEXT` section line by line: drops listed tokens and
    /// lines containing listed tokens, and, with `restore_probability`,
    /// applies a revision note `<marker> from <a> to <b>` by replacing `a`
    /// with `b` in every other line. The note itself is kept.
    Refine {
        #[serde(default)]
        drop_tokens: Vec<String>,
        #[serde(default)]
        drop_segments_with: Vec<String>,
        #[serde(default)]
        restore_probability: f64,
        #[serde(default = "default_marker")]
        marker: String,
        #[serde(default)]
        seed: u64,
    },
}

fn default_marker() -> String {
    "revised".into()
}

impl Script {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("script {}: {e}", path.display())))
    }
}

pub struct ScriptedClient {
    script: Script,
    calls: AtomicUsize,
    cursors: Mutex<Vec<usize>>,
}

impl ScriptedClient {
    pub fn new(script: Script) -> Self {
        let n = script.rules.len();
        Self {
            script,
            calls: AtomicUsize::new(0),
            cursors: Mutex::new(vec![0; n]),
        }
    }

    /// A client with a single rule for every template.
    pub fn always(respond: Response) -> Self {
        Self::new(Script {
            model: default_model(),
            rules: vec![Rule {
                template: None,
                contains: None,
                respond,
            }],
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn respond(&self, index: usize, rule: &Rule, prompt: &str) -> Result<String> {
        match &rule.respond {
            Response::Text { text } => Ok(text.clone()),
            Response::Sequence { texts } => {
                if texts.is_empty() {
                    return Err(Error::InvalidConfig("sequence rule without texts".into()));
                }
                let mut cursors = self.cursors.lock().expect("cursor lock");
                let out = texts[cursors[index] % texts.len()].clone();
                cursors[index] += 1;
                Ok(out)
            }
            Response::Echo { section: name } => section(prompt, name)
                .map(str::to_string)
                .ok_or_else(|| Error::Response(format!("prompt has no `{name}` section to echo"))),
            Response::Vote {
                section: name,
                vocabulary,
                invert,
                seed,
            } => {
                let labels = prompt_labels(prompt, vocabulary);
                if labels.is_empty() {
                    return Err(Error::Response("vote rule found no labels".into()));
                }
                let winner = section(prompt, name).and_then(|text| vote(text, &labels, vocabulary));
                let pick = match winner {
                    Some(c) if *invert => (c + 1) % labels.len(),
                    Some(c) => c,
                    None => (unit_hash(*seed, prompt) * labels.len() as f64) as usize,
                };
                Ok(format!("ANSWER: {}", labels[pick.min(labels.len() - 1)]))
            }
            Response::Guess { seed } => {
                let labels = prompt_labels(prompt, &BTreeMap::new());
                if labels.is_empty() {
                    return Err(Error::Response("guess rule found no labels".into()));
                }
                let pick = (unit_hash(*seed, prompt) * labels.len() as f64) as usize;
                Ok(format!("ANSWER: {}", labels[pick.min(labels.len() - 1)]))
            }
            Response::Refine {
                drop_tokens,
                drop_segments_with,
                restore_probability,
                marker,
                seed,
            } => {
                let text = section(prompt, "TEXT")
                    .ok_or_else(|| Error::Response("prompt has no `TEXT` section to refine".into()))?;
                let restore = unit_hash(*seed, text) < *restore_probability;
                Ok(refine_lines(text, drop_tokens, drop_segments_with, restore.then_some(marker.as_str())))
            }
        }
    }
}

impl LlmClient for ScriptedClient {
    fn model(&self) -> &str {
        &self.script.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = request.prompt();
        let (index, rule) = self
            .script
            .rules
            .iter()
            .enumerate()
            .find(|(_, r)| {
                r.template.is_none_or(|t| t == request.template)
                    && r.contains.as_deref().is_none_or(|c| prompt.contains(c))
            })
            .ok_or_else(|| {
                Error::Response(format!("no scripted rule matches a `{}` request", request.template))
            })?;
        let text = self.respond(index, rule, prompt)?;
        let words = |s: &str| s.split_whitespace().count() as u64;
        let usage = Usage {
            input_tokens: request.messages.iter().map(|m| words(&m.content)).sum(),
            output_tokens: words(&text),
        };
        Ok(Completion { text, usage })
    }
}

/// Labels listed in the prompt's `LABELS` section, else the vocabulary keys.
fn prompt_labels(prompt: &str, vocabulary: &BTreeMap<String, Vec<String>>) -> Vec<String> {
    match section(prompt, "LABELS") {
        Some(s) => s.split(',').map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect(),
        None => vocabulary.keys().cloned().collect(),
    }
}

fn vote(text: &str, labels: &[String], vocabulary: &BTreeMap<String, Vec<String>>) -> Option<usize> {
    let tokens = tokenize(text);
    let counts: Vec<usize> = labels
        .iter()
        .map(|l| {
            vocabulary.get(l).map_or(0, |words| {
                tokens
                    .iter()
                    .filter(|t| words.iter().any(|w| w.eq_ignore_ascii_case(t)))
                    .count()
            })
        })
        .collect();
    let best = *counts.iter().max()?;
    let winners: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] == best).collect();
    (best > 0 && winners.len() == 1).then(|| winners[0])
}

/// Uniform value in `[0, 1)` from a seed and a text.
pub fn unit_hash(seed: u64, text: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(text.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

fn split_word(word: &str) -> (&str, &str, &str) {
    let is_core = |c: char| c.is_alphanumeric() || c == '_';
    let start = word.find(is_core).unwrap_or(word.len());
    let end = word.rfind(is_core).map_or(start, |i| i + word[i..].chars().next().map_or(1, char::len_utf8));
    (&word[..start], &word[start..end], &word[end..])
}

fn refine_lines(text: &str, drop_tokens: &[String], drop_segments_with: &[String], marker: Option<&str>) -> String {
    let lower = |v: &[String]| v.iter().map(|s| s.to_lowercase()).collect::<BTreeSet<_>>();
    let (drop_tokens, drop_lines) = (lower(drop_tokens), lower(drop_segments_with));
    let mut lines: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .filter(|l| !tokenize(l).iter().any(|t| drop_lines.contains(t)))
        .map(|l| remove_words(l, &drop_tokens))
        .filter(|l| !tokenize(l).is_empty())
        .collect();
    if let Some(marker) = marker {
        let note = lines.iter().enumerate().find_map(|(i, l)| {
            let t = tokenize(l);
            t.windows(5)
                .find(|w| w[0] == marker && w[1] == "from" && w[3] == "to")
                .map(|w| (i, w[2].clone(), w[4].clone()))
        });
        if let Some((at, from, to)) = note {
            for (i, line) in lines.iter_mut().enumerate() {
                if i != at {
                    *line = replace_word(line, &from, &to);
                }
            }
        }
    }
    lines.join("\n")
}

fn remove_words(line: &str, drop: &BTreeSet<String>) -> String {
    let mut out: Vec<String> = Vec::new();
    for word in line.split_whitespace() {
        let (_, core, post) = split_word(word);
        if !core.is_empty() && drop.contains(&core.to_lowercase()) {
            // keep trailing punctuation such as a sentence's final period
            if let Some(last) = out.last_mut() {
                last.push_str(post);
            }
            continue;
        }
        out.push(word.to_string());
    }
    out.join(" ")
}

fn replace_word(line: &str, from: &str, to: &str) -> String {
    line.split_whitespace()
        .map(|word| {
            let (pre, core, post) = split_word(word);
            if core.eq_ignore_ascii_case(from) {
                format!("{pre}{to}{post}")
            } else {
                word.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::client::Message;

    fn request(template: TemplateId, prompt: &str) -> CompletionRequest {
        CompletionRequest {
            template,
            messages: vec![Message::system("sys"), Message::user(prompt)],
            temperature: 0.3,
            max_tokens: 16,
        }
    }

    fn vocab() -> BTreeMap<String, Vec<String>> {
        BTreeMap::from([
            ("down".to_string(), vec!["signal_down".to_string()]),
            ("up".to_string(), vec!["signal_up".to_string()]),
        ])
    }

    #[test]
    fn first_matching_rule_wins() {
        let client = ScriptedClient::new(Script {
            model: "m".into(),
            rules: vec![
                Rule {
                    template: Some(TemplateId::Refinement),
                    contains: None,
                    respond: Response::Text { text: "refined".into() },
                },
                Rule {
                    template: None,
                    contains: Some("needle".into()),
                    respond: Response::Text { text: "found".into() },
                },
                Rule {
                    template: None,
                    contains: None,
                    respond: Response::Text { text: "default".into() },
                },
            ],
        });
        let text = |t, p: &str| client.complete(&request(t, p)).unwrap().text;
        assert_eq!(text(TemplateId::Refinement, "needle"), "refined");
        assert_eq!(text(TemplateId::Prediction, "a needle"), "found");
        assert_eq!(text(TemplateId::Prediction, "hay"), "default");
        assert_eq!(client.calls(), 3);
    }

    #[test]
    fn no_matching_rule_is_a_response_error() {
        let client = ScriptedClient::new(Script {
            model: "m".into(),
            rules: vec![],
        });
        let err = client.complete(&request(TemplateId::Prediction, "x")).unwrap_err();
        assert!(matches!(err, Error::Response(_)));
    }

    #[test]
    fn sequence_cycles() {
        let client = ScriptedClient::always(Response::Sequence {
            texts: vec!["a".into(), "b".into()],
        });
        let got: Vec<String> = (0..3)
            .map(|_| client.complete(&request(TemplateId::Prediction, "")).unwrap().text)
            .collect();
        assert_eq!(got, ["a", "b", "a"]);
    }

    #[test]
    fn vote_counts_indicator_tokens_in_the_section() {
        let client = ScriptedClient::always(Response::Vote {
            section: "TEXT".into(),
            vocabulary: vocab(),
            invert: false,
            seed: 0,
        });
        let prompt = "<<LABELS>>\ndown, up\n<</LABELS>>\n<<TEXT>>\nsignal_up here. signal_up. signal_down.\n<</TEXT>>";
        assert_eq!(client.complete(&request(TemplateId::Prediction, prompt)).unwrap().text, "ANSWER: up");
    }

    #[test]
    fn inverted_vote_answers_another_label() {
        let client = ScriptedClient::always(Response::Vote {
            section: "TEXT".into(),
            vocabulary: vocab(),
            invert: true,
            seed: 0,
        });
        let prompt = "<<LABELS>>\ndown, up\n<</LABELS>>\n<<TEXT>>\nsignal_up.\n<</TEXT>>";
        assert_eq!(client.complete(&request(TemplateId::Prediction, prompt)).unwrap().text, "ANSWER: down");
    }

    #[test]
    fn vote_without_evidence_guesses_deterministically() {
        let client = ScriptedClient::always(Response::Vote {
            section: "EXPLANATIONS".into(),
            vocabulary: vocab(),
            invert: false,
            seed: 3,
        });
        let prompt = "<<LABELS>>\ndown, up\n<</LABELS>>\n<<TEXT>>\nsignal_up.\n<</TEXT>>";
        let a = client.complete(&request(TemplateId::Prediction, prompt)).unwrap().text;
        let b = client.complete(&request(TemplateId::Prediction, prompt)).unwrap().text;
        assert_eq!(a, b);
        assert!(a == "ANSWER: up" || a == "ANSWER: down");
    }

    #[test]
    fn guesses_cover_both_labels() {
        let client = ScriptedClient::always(Response::Guess { seed: 1 });
        let answers: BTreeSet<String> = (0..40)
            .map(|i| {
                let prompt = format!("<<LABELS>>\ndown, up\n<</LABELS>>\n{i}");
                client.complete(&request(TemplateId::Prediction, &prompt)).unwrap().text
            })
            .collect();
        assert_eq!(answers.len(), 2);
    }

    #[test]
    fn refine_drops_noise_and_applies_the_note() {
        let text = "the zzq signal_down report.\nlevels signal_down zzq.\noutlook revised from signal_down to signal_up.";
        let out = refine_lines(text, &["zzq".into()], &[], Some("revised"));
        assert_eq!(
            out,
            "the signal_up report.\nlevels signal_up.\noutlook revised from signal_down to signal_up."
        );
        let kept = refine_lines(text, &[], &[], None);
        assert_eq!(kept, text);
    }

    #[test]
    fn refine_can_drop_whole_lines() {
        let out = refine_lines("keep this.\nzzq drop this.\nand this.", &[], &["zzq".into()], None);
        assert_eq!(out, "keep this.\nand this.");
    }

    #[test]
    fn unit_hash_is_uniform_enough() {
        let n = 4000;
        let below = (0..n).filter(|i| unit_hash(9, &i.to_string()) < 0.8).count();
        let rate = below as f64 / n as f64;
        assert!((rate - 0.8).abs() < 0.03, "{rate}");
    }

    #[test]
    fn usage_counts_words() {
        let client = ScriptedClient::always(Response::Text { text: "one two".into() });
        let c = client.complete(&request(TemplateId::Prediction, "a b c")).unwrap();
        assert_eq!(c.usage, Usage { input_tokens: 4, output_tokens: 2 });
    }
}
