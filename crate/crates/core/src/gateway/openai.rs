//! OpenAI-compatible chat-completions and embeddings over HTTP.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    ChatProvider, ChatRequest, EmbeddingProvider, ErrorKind, ProviderError, RetryPolicy,
    DEFAULT_MODEL, ENV_API_KEY, ENV_BASE_URL, ENV_EMBED_MODEL, ENV_MODEL,
};

/// Provider settings. The API key itself is never stored here: it is read
/// from the environment variable named by `api_key_env` when the provider is
/// built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub base_url: String,
    pub api_key_env: String,
    pub model: String,
    pub embedding_model: String,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: ENV_API_KEY.into(),
            model: DEFAULT_MODEL.into(),
            embedding_model: "bge-m3".into(),
            retry: RetryPolicy::default(),
            max_in_flight: 8,
            timeout_secs: 60,
        }
    }
}

impl ProviderConfig {
    /// Applies `SWITCH_LLM_BASE_URL`, `SWITCH_LLM_MODEL` and
    /// `SWITCH_EMBED_MODEL` on top of `self`.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_BASE_URL) {
            self.base_url = url;
        }
        if let Ok(model) = std::env::var(ENV_MODEL) {
            self.model = model;
        }
        if let Ok(model) = std::env::var(ENV_EMBED_MODEL) {
            self.embedding_model = model;
        }
        self
    }
}

pub struct OpenAiProvider {
    base_url: String,
    api_key: Option<String>,
    embedding_model: String,
    http: reqwest::blocking::Client,
}

impl fmt::Debug for OpenAiProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpenAiProvider")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("embedding_model", &self.embedding_model)
            .finish()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f32>,
}

impl OpenAiProvider {
    /// Must be called outside of an async runtime.
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::new(ErrorKind::NotConfigured, e.to_string()))?;
        Ok(Self {
            base_url: config.base_url.trim_end_matches('/').to_string(),
            api_key,
            embedding_model: config.embedding_model.clone(),
            http,
        })
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<String, ProviderError> {
        let mut request = self.http.post(format!("{}/{}", self.base_url, path)).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| ProviderError::new(ErrorKind::Transport, e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| ProviderError::new(ErrorKind::Transport, e.to_string()))?;
        if status.is_success() {
            return Ok(text);
        }
        let kind = match status.as_u16() {
            429 => ErrorKind::RateLimited,
            500..=599 => ErrorKind::Server,
            _ => ErrorKind::Client,
        };
        let mut body = truncate(&text, 300).to_string();
        if let Some(key) = &self.api_key {
            body = body.replace(key.as_str(), "<redacted>");
        }
        Err(ProviderError::new(kind, format!("HTTP {status}: {body}")))
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Request body for `POST /chat/completions`.
pub(crate) fn chat_body(request: &ChatRequest) -> serde_json::Value {
    let mut body = json!({
        "model": request.model,
        "messages": request.messages,
        "temperature": request.temperature,
    });
    if let Some(max) = request.max_tokens {
        body["max_tokens"] = json!(max);
    }
    if request.structured_output {
        body["response_format"] = json!({ "type": "json_object" });
    }
    body
}

impl ChatProvider for OpenAiProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let raw = self.post("chat/completions", &chat_body(request))?;
        let parsed: ChatResponse = serde_json::from_str(&raw)
            .map_err(|e| ProviderError::new(ErrorKind::InvalidResponse, e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::new(ErrorKind::InvalidResponse, "response has no content"))
    }
}

impl EmbeddingProvider for OpenAiProvider {
    fn model_id(&self) -> &str {
        &self.embedding_model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let body = json!({ "model": self.embedding_model, "input": texts });
        let raw = self.post("embeddings", &body)?;
        let mut parsed: EmbeddingResponse = serde_json::from_str(&raw)
            .map_err(|e| ProviderError::new(ErrorKind::InvalidResponse, e.to_string()))?;
        parsed.data.sort_by_key(|d| d.index);
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}
