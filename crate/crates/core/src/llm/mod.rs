//! Chat-completion backends, prompt templates and response parsing.

mod mock;
mod parse;
mod remote;
mod replay;
pub mod templates;

use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::try_bounded_map;
use crate::rng::fnv1a64;

pub use mock::{mock_predicate, MockEvaluator, MockExplainer, MockGenerator};
pub use parse::{parse_generated_lines, parse_predicate, parse_yes_no, quoted_word};
pub use remote::RemoteChat;
pub use replay::ReplayBackend;
pub use templates::{PromptTemplate, TemplateName};

pub const DEFAULT_LLM_PARALLELISM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Explainer,
    Evaluator,
    Generator,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Explainer, Role::Evaluator, Role::Generator];
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Explainer => "explainer",
            Role::Evaluator => "evaluator",
            Role::Generator => "generator",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub role: Role,
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl LlmConfig {
    pub fn defaults(role: Role) -> Self {
        match role {
            Role::Explainer => Self {
                role,
                model_id: "gpt-3.5-turbo-0125".into(),
                temperature: 0.1,
                top_p: 1.0,
                max_tokens: 512,
                seed: None,
            },
            Role::Evaluator => Self {
                role,
                model_id: "mistralai/Mixtral-8x7B-Instruct-v0.1".into(),
                temperature: 0.0,
                top_p: 1.0,
                max_tokens: 1,
                seed: None,
            },
            Role::Generator => Self {
                role,
                model_id: "gpt-3.5-turbo-0125".into(),
                temperature: 0.7,
                top_p: 1.0,
                max_tokens: 4096,
                seed: Some(0),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_id.trim().is_empty() {
            return Err(Error::Config(format!("{}: model_id is empty", self.role)));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::Config(format!(
                "{}: temperature must be >= 0, got {}",
                self.role, self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!(
                "{}: top_p must be in (0, 1], got {}",
                self.role, self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config(format!("{}: max_tokens must be >= 1", self.role)));
        }
        Ok(())
    }
}

/// One prompt/response pair, stored verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub id: String,
    pub role: Role,
    pub prompt: String,
    pub response: String,
    pub backend_tag: String,
    pub latency_ms: u64,
    pub token_estimate: u64,
}

/// Content address of a request: the same role and prompt give the same id.
pub fn exchange_id(role: Role, prompt: &str) -> String {
    let mut key = role.to_string().into_bytes();
    key.push(0);
    key.extend_from_slice(prompt.as_bytes());
    format!("{role}-{:016x}", fnv1a64(&key))
}

pub trait ChatBackend: Send + Sync {
    fn tag(&self) -> String;
    fn chat(&self, config: &LlmConfig, prompt: &str) -> Result<String>;
}

pub fn complete(backend: &dyn ChatBackend, config: &LlmConfig, prompt: &str) -> Result<ChatExchange> {
    let started = Instant::now();
    let response = backend.chat(config, prompt)?;
    if response.trim().is_empty() {
        return Err(Error::Backend(format!(
            "{} returned an empty response for {}",
            backend.tag(),
            exchange_id(config.role, prompt)
        )));
    }
    let token_estimate = (prompt.split_whitespace().count() + response.split_whitespace().count()) as u64;
    Ok(ChatExchange {
        id: exchange_id(config.role, prompt),
        role: config.role,
        prompt: prompt.to_string(),
        response,
        backend_tag: backend.tag(),
        latency_ms: started.elapsed().as_millis() as u64,
        token_estimate,
    })
}

/// Append-only record of every exchange of a run. Clones share storage.
#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    entries: Arc<Mutex<Vec<ChatExchange>>>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, exchange: ChatExchange) {
        self.entries.lock().expect("audit log poisoned").push(exchange);
    }

    pub fn extend(&self, exchanges: impl IntoIterator<Item = ChatExchange>) {
        self.entries.lock().expect("audit log poisoned").extend(exchanges);
    }

    pub fn snapshot(&self) -> Vec<ChatExchange> {
        self.entries.lock().expect("audit log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("audit log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        crate::corpus::write_lines(path, &self.snapshot())
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<ChatExchange>> {
        crate::corpus::read_lines(path)
    }
}

/// A backend bound to one role's config, recording into a shared log.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    config: LlmConfig,
    audit: AuditLog,
    parallelism: usize,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient")
            .field("backend", &self.backend.tag())
            .field("config", &self.config)
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>, config: LlmConfig, audit: AuditLog) -> Self {
        Self {
            backend,
            config,
            audit,
            parallelism: DEFAULT_LLM_PARALLELISM,
        }
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    /// The same backend and config, recording into `audit`.
    pub fn with_audit(&self, audit: AuditLog) -> Self {
        Self { audit, ..self.clone() }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn complete(&self, prompt: &str) -> Result<ChatExchange> {
        let ex = complete(self.backend.as_ref(), &self.config, prompt)?;
        self.audit.record(ex.clone());
        Ok(ex)
    }

    /// Runs the prompts with bounded parallelism. Results, and log entries,
    /// follow input order.
    pub fn complete_all(&self, prompts: &[String]) -> Result<Vec<ChatExchange>> {
        let results = try_bounded_map(prompts, self.parallelism, |p| {
            complete(self.backend.as_ref(), &self.config, p)
        })?;
        for ex in &results {
            self.audit.record(ex.clone());
        }
        Ok(results)
    }
}
