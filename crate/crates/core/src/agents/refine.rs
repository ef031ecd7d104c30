use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::prompt::{render_text, section, TemplateId};
use crate::agents::session::{AgentSession, CallCategory};
use crate::data::{segment_text, SegmentationPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub segments: Vec<String>,
    /// The reply was unusable and the original text was kept.
    pub fell_back: bool,
}

impl AgentSession<'_> {
    /// Rewrites `segments` under the guideline `reflection` and re-segments
    /// the reply with `policy`. A reply that yields fewer than
    /// `min_segments` segments is discarded in favour of the original.
    pub fn refine_text(
        &self,
        reflection: &str,
        segments: &[String],
        policy: SegmentationPolicy,
        min_segments: usize,
    ) -> Result<Refinement> {
        if reflection.trim().is_empty() {
            return Err(Error::Contract("refinement needs a non-empty reflection".into()));
        }
        let fields = BTreeMap::from([
            ("reflection", reflection.to_string()),
            ("text", render_text(self.fit_to_budget(segments))),
        ]);
        let messages = TemplateId::Refinement.template().render(&fields)?;
        let reply = self.call(
            TemplateId::Refinement,
            CallCategory::Refine,
            messages,
            self.config.generate_temperature,
        )?;
        let body = section(&reply.text, "TEXT").unwrap_or(&reply.text);
        match segment_text(body, policy) {
            Ok(refined) if refined.len() >= min_segments => Ok(Refinement {
                segments: refined,
                fell_back: false,
            }),
            Ok(refined) => {
                tracing::warn!(
                    got = refined.len(),
                    need = min_segments,
                    "refined text too short; keeping the original"
                );
                Ok(self.keep(segments))
            }
            Err(_) => {
                tracing::warn!("refinement reply is empty; keeping the original");
                Ok(self.keep(segments))
            }
        }
    }

    fn keep(&self, segments: &[String]) -> Refinement {
        Refinement {
            segments: segments.to_vec(),
            fell_back: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::scripted::{Response, ScriptedClient};
    use crate::agents::session::AgentConfig;

    fn text() -> Vec<String> {
        ["calm zzq morning.", "wind rising.", "zzq."].map(String::from).to_vec()
    }

    #[test]
    fn identity_client_keeps_the_text() {
        let client = ScriptedClient::always(Response::Echo { section: "TEXT".into() });
        let s = AgentSession::new(&client, AgentConfig::default()).unwrap();
        let r = s.refine_text("guide", &text(), SegmentationPolicy::Sentence, 1).unwrap();
        assert_eq!(r.segments, text());
        assert!(!r.fell_back);
    }

    #[test]
    fn noise_deleting_client() {
        let client = ScriptedClient::always(Response::Refine {
            drop_tokens: vec![],
            drop_segments_with: vec!["zzq".into()],
            restore_probability: 0.0,
            marker: "revised".into(),
            seed: 0,
        });
        let s = AgentSession::new(&client, AgentConfig::default()).unwrap();
        let r = s.refine_text("guide", &text(), SegmentationPolicy::Sentence, 1).unwrap();
        assert_eq!(r.segments, vec!["wind rising.".to_string()]);
        assert!(r.segments.iter().all(|seg| !seg.contains("zzq")));
    }

    #[test]
    fn too_short_reply_falls_back() {
        let client = ScriptedClient::always(Response::Text { text: "One line.".into() });
        let s = AgentSession::new(&client, AgentConfig::default()).unwrap();
        let r = s.refine_text("guide", &text(), SegmentationPolicy::Sentence, 2).unwrap();
        assert_eq!(r.segments, text());
        assert!(r.fell_back);
    }

    #[test]
    fn empty_reflection_is_rejected() {
        let client = ScriptedClient::always(Response::Text { text: "x.".into() });
        let s = AgentSession::new(&client, AgentConfig::default()).unwrap();
        assert!(s.refine_text("  ", &text(), SegmentationPolicy::Sentence, 1).is_err());
        assert_eq!(client.calls(), 0);
    }
}
