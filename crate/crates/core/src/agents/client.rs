use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agents::prompt::TemplateId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    /// Which template produced the messages; informational for live
    /// endpoints, used for rule matching by the scripted client.
    pub template: TemplateId,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    /// Text of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

pub trait LlmClient: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<Completion>;
}

/// Exponential backoff for transport failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: usize,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

/// Outcome of one failed attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    Retryable(String),
    Fatal(String),
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: usize) -> Duration {
        let factor = 1u64.checked_shl(retry as u32).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> std::result::Result<T, Failure>) -> Result<T> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(message)) => {
                    return Err(Error::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(Failure::Retryable(message)) => {
                    if attempt > self.max_retries {
                        return Err(Error::Transport {
                            attempts: attempt,
                            message,
                        });
                    }
                    let wait = self.delay(attempt - 1);
                    tracing::warn!(attempt, ?wait, %message, "llm call failed, retrying");
                    thread::sleep(wait);
                }
            }
        }
    }
}

/// Chat-completion client for an OpenAI-compatible HTTP endpoint.
pub struct LiveClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl LiveClient {
    pub const ENDPOINT_VAR: &'static str = "PROTOFUSE_LLM_ENDPOINT";
    pub const MODEL_VAR: &'static str = "PROTOFUSE_LLM_MODEL";
    pub const KEY_VAR: &'static str = "PROTOFUSE_LLM_API_KEY";

    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            retry,
            agent,
        }
    }

    /// Reads endpoint, model and key from the environment.
    pub fn from_env(retry: RetryPolicy) -> Result<Self> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        let endpoint = var(Self::ENDPOINT_VAR)
            .ok_or_else(|| Error::InvalidConfig(format!("{} is not set", Self::ENDPOINT_VAR)))?;
        let model = var(Self::MODEL_VAR)
            .ok_or_else(|| Error::InvalidConfig(format!("{} is not set", Self::MODEL_VAR)))?;
        Ok(Self::new(endpoint, model, var(Self::KEY_VAR), retry))
    }

    fn attempt(&self, body: &Value) -> std::result::Result<Completion, Failure> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Failure::Retryable(format!("request failed: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retryable(format!("reading response body: {e}")))?;
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("HTTP {status}: {}", snippet(&text))));
        }
        if !(200..300).contains(&status) {
            return Err(Failure::Fatal(format!("HTTP {status}: {}", snippet(&text))));
        }
        parse_chat_response(&text).map_err(Failure::Fatal)
    }
}

impl LlmClient for LiveClient {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion> {
        let body = json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "top_p": 1.0,
        });
        self.retry.run(|| self.attempt(&body))
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

/// Extracts the first choice's content and the token usage.
pub fn parse_chat_response(text: &str) -> std::result::Result<Completion, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| format!("response is not JSON: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| format!("response has no message content: {}", snippet(text)))?;
    let count = |p: &str| v.pointer(p).and_then(Value::as_u64).unwrap_or(0);
    Ok(Completion {
        text: content.to_string(),
        usage: Usage {
            input_tokens: count("/usage/prompt_tokens"),
            output_tokens: count("/usage/completion_tokens"),
        },
    })
}
