use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::client::{Completion, CompletionRequest, LlmClient, Message, RetryPolicy, Usage};
use crate::agents::prompt::TemplateId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub predict_temperature: f64,
    pub generate_temperature: f64,
    pub max_tokens: u32,
    /// Training records per reflection call.
    pub reflection_batch_size: usize,
    /// Extra prediction attempts after an unparseable answer.
    pub format_retries: usize,
    /// Concurrent calls for per-sample phases; 1 keeps calls sequential.
    pub parallelism: usize,
    /// Approximate token budget (whitespace words) for a prompt's text
    /// section; the oldest segments are dropped first when exceeded.
    pub context_budget: Option<usize>,
    pub retry: RetryPolicy,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            predict_temperature: 0.3,
            generate_temperature: 0.7,
            max_tokens: 2048,
            reflection_batch_size: 50,
            format_retries: 1,
            parallelism: 1,
            context_budget: None,
            retry: RetryPolicy::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.reflection_batch_size == 0 {
            return bad("reflection batch size must be ≥ 1");
        }
        if self.parallelism == 0 {
            return bad("parallelism must be ≥ 1");
        }
        if self.context_budget == Some(0) {
            return bad("context budget must be ≥ 1");
        }
        for t in [self.predict_temperature, self.generate_temperature] {
            if !(0.0..=2.0).contains(&t) {
                return bad("temperatures must lie in [0, 2]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallCategory {
    Predict,
    Reflect,
    Refine,
    /// Zero-shot text-quality measurements, kept apart from predictions.
    Probe,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    fn add(&mut self, usage: Usage) {
        self.calls += 1;
        self.input_tokens += usage.input_tokens;
        self.output_tokens += usage.output_tokens;
    }

    pub fn minus(&self, earlier: &TokenUsage) -> TokenUsage {
        TokenUsage {
            calls: self.calls - earlier.calls,
            input_tokens: self.input_tokens - earlier.input_tokens,
            output_tokens: self.output_tokens - earlier.output_tokens,
        }
    }
}

/// Cumulative usage per call category. Counters only grow.
#[derive(Debug, Default)]
pub struct UsageLedger {
    tokens: Mutex<BTreeMap<CallCategory, TokenUsage>>,
    wall_ms: Mutex<BTreeMap<CallCategory, u64>>,
}

impl UsageLedger {
    pub fn record(&self, category: CallCategory, usage: Usage, wall_ms: u64) {
        self.tokens.lock().expect("usage lock").entry(category).or_default().add(usage);
        *self.wall_ms.lock().expect("usage lock").entry(category).or_default() += wall_ms;
    }

    pub fn tokens(&self) -> BTreeMap<CallCategory, TokenUsage> {
        self.tokens.lock().expect("usage lock").clone()
    }

    pub fn wall_ms(&self) -> BTreeMap<CallCategory, u64> {
        self.wall_ms.lock().expect("usage lock").clone()
    }

    pub fn total(&self) -> TokenUsage {
        self.tokens().values().fold(TokenUsage::default(), |mut acc, u| {
            acc.calls += u.calls;
            acc.input_tokens += u.input_tokens;
            acc.output_tokens += u.output_tokens;
            acc
        })
    }
}

/// Per-category difference between two ledger snapshots.
pub fn usage_delta(
    now: &BTreeMap<CallCategory, TokenUsage>,
    before: &BTreeMap<CallCategory, TokenUsage>,
) -> BTreeMap<CallCategory, TokenUsage> {
    now.iter()
        .map(|(k, v)| (*k, v.minus(&before.get(k).copied().unwrap_or_default())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub seq: u64,
    pub template: TemplateId,
    pub category: CallCategory,
    pub model: String,
    pub messages: Vec<Message>,
    pub response: Option<String>,
    pub error: Option<String>,
    pub usage: Usage,
    pub latency_ms: u64,
}

/// Line-delimited log of every call.
pub struct Transcript {
    out: Mutex<BufWriter<File>>,
}

impl Transcript {
    /// Appends to `path`, creating it and its directory when needed.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append(&self, record: &TranscriptRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        let mut out = self.out.lock().expect("transcript lock");
        writeln!(out, "{line}")
            .and_then(|_| out.flush())
            .map_err(|e| Error::io("transcript", e))
    }
}

/// An LLM client bound to a configuration, a usage ledger and an optional
/// transcript. All agent operations go through [`AgentSession::call`].
pub struct AgentSession<'a> {
    client: &'a dyn LlmClient,
    pub config: AgentConfig,
    ledger: UsageLedger,
    transcript: Option<Transcript>,
    seq: AtomicU64,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> AgentSession<'a> {
    pub fn new(client: &'a dyn LlmClient, config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let pool = if config.parallelism > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.parallelism)
                    .build()
                    .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            client,
            config,
            ledger: UsageLedger::default(),
            transcript: None,
            seq: AtomicU64::new(0),
            pool,
        })
    }

    pub fn with_transcript(mut self, transcript: Transcript) -> Self {
        self.transcript = Some(transcript);
        self
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn model(&self) -> &str {
        self.client.model()
    }

    pub fn call(
        &self,
        template: TemplateId,
        category: CallCategory,
        messages: Vec<Message>,
        temperature: f64,
    ) -> Result<Completion> {
        let request = CompletionRequest {
            template,
            messages,
            temperature,
            max_tokens: self.config.max_tokens,
        };
        let start = Instant::now();
        let result = self.client.complete(&request);
        let latency_ms = start.elapsed().as_millis() as u64;
        if let Ok(c) = &result {
            self.ledger.record(category, c.usage, latency_ms);
        }
        if let Some(t) = &self.transcript {
            let (response, error, usage) = match &result {
                Ok(c) => (Some(c.text.clone()), None, c.usage),
                Err(e) => (None, Some(e.to_string()), Usage::default()),
            };
            t.append(&TranscriptRecord {
                seq: self.seq.fetch_add(1, Ordering::SeqCst),
                template,
                category,
                model: self.client.model().to_string(),
                messages: request.messages,
                response,
                error,
                usage,
                latency_ms,
            })?;
        }
        result
    }

    /// Applies `f` to every item, concurrently when the configuration allows;
    /// results keep the input order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Result<R> + Sync + Send,
    {
        match &self.pool {
            Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            None => items.iter().map(f).collect(),
        }
    }

    /// Drops the oldest segments until the text fits the context budget.
    pub fn fit_to_budget<'s>(&self, segments: &'s [String]) -> &'s [String] {
        let Some(budget) = self.config.context_budget else {
            return segments;
        };
        let words: Vec<usize> = segments.iter().map(|s| s.split_whitespace().count()).collect();
        let mut total: usize = words.iter().sum();
        let mut start = 0;
        while total > budget && start + 1 < segments.len() {
            total -= words[start];
            start += 1;
        }
        if start > 0 {
            tracing::warn!(dropped = start, budget, "text exceeds the context budget; oldest segments dropped");
        }
        &segments[start..]
    }
}
