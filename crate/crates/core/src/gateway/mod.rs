//! The single boundary to chat-completion and embedding providers.
//!
//! Every LLM call in the crate goes through [`Gateway`], which wraps a
//! [`ChatProvider`] (and optionally an [`EmbeddingProvider`]) with retries,
//! an in-flight limit and an on-disk embedding cache. Tests and offline runs
//! plug in [`MockProvider`] / [`MockEmbedder`].

mod cache;
mod mock;
mod openai;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

pub use cache::EmbeddingCache;
pub use mock::{Matcher, MockEmbedder, MockProvider, MockReply, MockRule, MockScript, RuleFile, ScriptFile};
pub use openai::{OpenAiProvider, ProviderConfig};

pub const ENV_API_KEY: &str = "SWITCH_LLM_API_KEY";
pub const ENV_BASE_URL: &str = "SWITCH_LLM_BASE_URL";
pub const ENV_MODEL: &str = "SWITCH_LLM_MODEL";
pub const ENV_EMBED_MODEL: &str = "SWITCH_EMBED_MODEL";
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// A chat-completion request.
///
/// `purpose` never goes over the wire; it labels the call site
/// (`"classify"`, `"client-reply"`, `"gate"`, `"cost-benefit"`) so scripted
/// providers can route responses.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    /// Empty means "use the gateway's default model".
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    pub structured_output: bool,
    pub max_tokens: Option<u32>,
    pub purpose: String,
}

impl ChatRequest {
    pub fn new(purpose: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: String::new(),
            messages,
            temperature: 0.0,
            structured_output: false,
            max_tokens: None,
            purpose: purpose.into(),
        }
    }

    pub fn temperature(mut self, temperature: f32) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn structured(mut self) -> Self {
        self.structured_output = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Transport,
    RateLimited,
    Server,
    Client,
    InvalidResponse,
    Unmatched,
    Precondition,
    NotConfigured,
}

impl ErrorKind {
    pub fn is_retryable(self) -> bool {
        matches!(self, ErrorKind::Transport | ErrorKind::RateLimited | ErrorKind::Server)
    }
}

/// A single failed provider call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ProviderError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

impl fmt::Display for ProviderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

/// Failure after the retry policy has been exhausted (or a non-retryable error).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("gateway error ({kind:?}) after {attempts} attempt(s): {message}")]
pub struct GatewayError {
    pub kind: ErrorKind,
    pub attempts: u32,
    pub message: String,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, initial_backoff_ms: 250, multiplier: 2.0, max_backoff_ms: 8_000 }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts.
    pub fn immediate(max_attempts: u32) -> Self {
        Self { max_attempts, initial_backoff_ms: 0, ..Self::default() }
    }

    fn backoff(&self, failed_attempts: u32) -> Duration {
        let factor = self.multiplier.powi(failed_attempts.saturating_sub(1) as i32);
        let ms = (self.initial_backoff_ms as f64 * factor).min(self.max_backoff_ms as f64);
        Duration::from_millis(ms as u64)
    }
}

/// A successful chat completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock();
        while *active >= self.limit {
            self.freed.wait(&mut active);
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    chat: Arc<dyn ChatProvider>,
    embedder: Option<Arc<dyn EmbeddingProvider>>,
    retry: RetryPolicy,
    default_model: String,
    in_flight: InFlight,
    cache: EmbeddingCache,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("default_model", &self.default_model)
            .field("retry", &self.retry)
            .field("max_in_flight", &self.in_flight.limit)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(chat: Arc<dyn ChatProvider>) -> Self {
        Self {
            chat,
            embedder: None,
            retry: RetryPolicy::default(),
            default_model: DEFAULT_MODEL.to_string(),
            in_flight: InFlight { limit: 8, active: Mutex::new(0), freed: Condvar::new() },
            cache: EmbeddingCache::in_memory(),
        }
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_default_model(mut self, model: impl Into<String>) -> Self {
        self.default_model = model.into();
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.in_flight.limit = limit.max(1);
        self
    }

    pub fn with_cache(mut self, cache: EmbeddingCache) -> Self {
        self.cache = cache;
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.in_flight.limit
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<(T, u32), GatewayError> {
        let max = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.in_flight.acquire();
                call()
            };
            match result {
                Ok(value) => return Ok((value, attempt)),
                Err(err) if err.kind.is_retryable() && attempt < max => {
                    tracing::debug!(attempt, error = %err, "retrying provider call");
                    std::thread::sleep(self.retry.backoff(attempt));
                }
                Err(err) => {
                    return Err(GatewayError { kind: err.kind, attempts: attempt, message: err.message })
                }
            }
        }
    }

    /// Sends a chat request, retrying transport, 429 and 5xx failures.
    pub fn chat(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError {
                kind: ErrorKind::Precondition,
                attempts: 0,
                message: "chat request has no messages".into(),
            });
        }
        let mut request = request.clone();
        if request.model.is_empty() {
            request.model = self.default_model.clone();
        }
        let (text, attempts) = self.with_retries(|| self.chat.complete(&request))?;
        Ok(Completion { text, attempts })
    }

    pub fn embedding_model(&self) -> Option<&str> {
        self.embedder.as_deref().map(|e| e.model_id())
    }

    /// Embeds `texts` as unit vectors, order preserved, served from the cache
    /// where possible.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let precondition = |message: &str| GatewayError {
            kind: ErrorKind::Precondition,
            attempts: 0,
            message: message.to_string(),
        };
        if texts.is_empty() {
            return Err(precondition("embed called with no texts"));
        }
        let embedder = self.embedder.as_deref().ok_or_else(|| GatewayError {
            kind: ErrorKind::NotConfigured,
            attempts: 0,
            message: "no embedding provider configured".into(),
        })?;
        let model = embedder.model_id().to_string();

        let mut out: Vec<Option<Vec<f32>>> = texts.iter().map(|t| self.cache.get(&model, t)).collect();
        let mut missing: Vec<String> = Vec::new();
        for (text, slot) in texts.iter().zip(&out) {
            if slot.is_none() && !missing.contains(text) {
                missing.push(text.clone());
            }
        }
        if !missing.is_empty() {
            let (raw, attempts) = self.with_retries(|| embedder.embed(&missing))?;
            if raw.len() != missing.len() {
                return Err(GatewayError {
                    kind: ErrorKind::InvalidResponse,
                    attempts,
                    message: format!("expected {} embeddings, got {}", missing.len(), raw.len()),
                });
            }
            for (text, vector) in missing.iter().zip(raw) {
                let unit = normalize(vector).ok_or_else(|| GatewayError {
                    kind: ErrorKind::InvalidResponse,
                    attempts,
                    message: "provider returned a zero or non-finite vector".into(),
                })?;
                self.cache.put(&model, text, &unit);
                for (t, slot) in texts.iter().zip(out.iter_mut()) {
                    if slot.is_none() && t == text {
                        *slot = Some(unit.clone());
                    }
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every slot filled")).collect())
    }
}

/// Scales `v` to unit Euclidean length; `None` for zero or non-finite input.
pub fn normalize(mut v: Vec<f32>) -> Option<Vec<f32>> {
    let norm = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    for x in &mut v {
        *x = (f64::from(*x) / norm) as f32;
    }
    Some(v)
}
