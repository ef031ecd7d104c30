//! LLM agents: prompt rendering, prediction, reflection and refinement.
//!
//! Every call goes through an [`AgentSession`], which books token usage per
//! call category and optionally logs each exchange to a transcript. Two
//! clients are provided: [`LiveClient`] for an OpenAI-compatible HTTP
//! endpoint and [`ScriptedClient`] for deterministic offline runs.

pub mod client;
pub mod predict;
pub mod prompt;
pub mod reflect;
pub mod refine;
pub mod scripted;
pub mod session;

pub use client::{Completion, CompletionRequest, LiveClient, LlmClient, Message, RetryPolicy, Role, Usage};
pub use predict::{parse_label, parse_value, LabelPrediction, ParseStatus, ValuePrediction};
pub use prompt::{section, PromptTemplate, TemplateId};
pub use reflect::{ReflectionRecord, ReflectionState};
pub use refine::Refinement;
pub use scripted::{Response, Rule, Script, ScriptedClient};
pub use session::{AgentConfig, AgentSession, CallCategory, TokenUsage, Transcript, UsageLedger};
