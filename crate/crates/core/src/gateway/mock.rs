//! Scriptable providers for tests, demos and offline runs.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, EmbeddingProvider, ErrorKind, ProviderError};

/// Selects which requests a rule answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    Any,
    /// Exact match on [`ChatRequest::purpose`].
    Purpose(String),
    /// Substring of any message's content.
    Contains(String),
}

impl Matcher {
    fn matches(&self, request: &ChatRequest) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Purpose(p) => request.purpose == *p,
            Matcher::Contains(needle) => request.messages.iter().any(|m| m.content.contains(needle)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Fail { fail: ErrorKind },
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        MockReply::Text(text.into())
    }

    pub fn fail(kind: ErrorKind) -> Self {
        MockReply::Fail { fail: kind }
    }
}

/// A matcher with a queue of replies. Replies are consumed in order; a sticky
/// rule keeps answering with its last reply once the queue is down to one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRule {
    pub matcher: Matcher,
    pub replies: VecDeque<MockReply>,
    pub sticky: bool,
}

impl MockRule {
    pub fn new(matcher: Matcher, replies: Vec<MockReply>) -> Self {
        Self { matcher, replies: replies.into(), sticky: false }
    }

    pub fn purpose(purpose: &str, replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self::new(
            Matcher::Purpose(purpose.to_string()),
            replies.into_iter().map(|r| MockReply::Text(r.into())).collect(),
        )
    }

    pub fn sticky(mut self) -> Self {
        self.sticky = true;
        self
    }

    fn take(&mut self) -> Option<MockReply> {
        if self.sticky && self.replies.len() == 1 {
            return self.replies.front().cloned();
        }
        self.replies.pop_front()
    }
}

/// The whole script: rules are tried in order, first live match wins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    pub default: Option<MockReply>,
    pub strict: bool,
}

impl MockScript {
    /// One catch-all rule answering with `replies` in order.
    pub fn sequence(replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self::default().rule(MockRule::new(
            Matcher::Any,
            replies.into_iter().map(|r| MockReply::Text(r.into())).collect(),
        ))
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn default_reply(mut self, reply: MockReply) -> Self {
        self.default = Some(reply);
        self
    }

    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        let file: ScriptFile = serde_json::from_str(json)?;
        Ok(file.into())
    }
}

/// On-disk representation of a [`MockScript`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptFile {
    pub strict: bool,
    pub default: Option<MockReply>,
    pub rules: Vec<RuleFile>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleFile {
    pub purpose: Option<String>,
    pub contains: Option<String>,
    pub replies: Vec<MockReply>,
    pub sticky: bool,
}

impl From<ScriptFile> for MockScript {
    fn from(file: ScriptFile) -> Self {
        let rules = file
            .rules
            .into_iter()
            .map(|r| {
                let matcher = match (r.purpose, r.contains) {
                    (Some(p), _) => Matcher::Purpose(p),
                    (None, Some(c)) => Matcher::Contains(c),
                    (None, None) => Matcher::Any,
                };
                MockRule { matcher, replies: r.replies.into(), sticky: r.sticky }
            })
            .collect();
        MockScript { rules, default: file.default, strict: file.strict }
    }
}

/// Deterministic chat provider driven by a [`MockScript`]. Records every
/// request it receives.
#[derive(Debug)]
pub struct MockProvider {
    script: Mutex<MockScript>,
    log: Mutex<Vec<ChatRequest>>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        Self { script: Mutex::new(script), log: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> usize {
        self.log.lock().len()
    }

    pub fn calls_for(&self, purpose: &str) -> usize {
        self.log.lock().iter().filter(|r| r.purpose == purpose).count()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().clone()
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.log.lock().push(request.clone());
        let mut script = self.script.lock();
        let reply = script
            .rules
            .iter_mut()
            .filter(|r| !r.replies.is_empty() && r.matcher.matches(request))
            .find_map(MockRule::take);
        let reply = match reply {
            Some(r) => r,
            None if !script.strict && script.default.is_some() => script.default.clone().unwrap(),
            None => {
                return Err(ProviderError::new(
                    ErrorKind::Unmatched,
                    format!("no scripted reply for {:?} request", request.purpose),
                ))
            }
        };
        match reply {
            MockReply::Text(text) => Ok(text),
            MockReply::Fail { fail } => Err(ProviderError::new(fail, "scripted failure")),
        }
    }
}

/// Deterministic embedding provider.
///
/// Texts registered with [`MockEmbedder::with_vector`] return that vector;
/// anything else gets a hashed bag-of-words vector, so similar texts land
/// near each other.
#[derive(Debug)]
pub struct MockEmbedder {
    model: String,
    dim: usize,
    fixed: BTreeMap<String, Vec<f32>>,
    calls: AtomicUsize,
}

impl MockEmbedder {
    pub fn hashed(model: impl Into<String>, dim: usize) -> Self {
        Self { model: model.into(), dim: dim.max(1), fixed: BTreeMap::new(), calls: AtomicUsize::new(0) }
    }

    pub fn with_vector(mut self, text: impl Into<String>, vector: Vec<f32>) -> Self {
        self.fixed.insert(text.into(), vector);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn hashed_vector(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        for token in crate::retrieval::tokenize(text) {
            let digest = Sha256::digest(token.as_bytes());
            let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) as usize % self.dim;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        v
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(texts
            .iter()
            .map(|t| self.fixed.get(t).cloned().unwrap_or_else(|| self.hashed_vector(t)))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;

    fn req(purpose: &str, text: &str) -> ChatRequest {
        ChatRequest::new(purpose, vec![ChatMessage::user(text)])
    }

    #[test]
    fn substring_matcher_routes_reply() {
        let mock = MockProvider::new(
            MockScript::default()
                .rule(MockRule::new(Matcher::Contains("FINAL".into()), vec![MockReply::text("FINAL: YES")]))
                .default_reply(MockReply::text("other")),
        );
        assert_eq!(mock.complete(&req("x", "end with FINAL: YES/NO")).unwrap(), "FINAL: YES");
        assert_eq!(mock.complete(&req("x", "hello")).unwrap(), "other");
    }

    #[test]
    fn strict_mode_rejects_unmatched() {
        let mock = MockProvider::new(MockScript::default().strict().default_reply(MockReply::text("d")));
        assert_eq!(mock.complete(&req("x", "hi")).unwrap_err().kind, ErrorKind::Unmatched);
    }

    #[test]
    fn sequence_consumed_in_order() {
        let mock = MockProvider::new(MockScript::sequence(["a", "b"]));
        assert_eq!(mock.complete(&req("x", "1")).unwrap(), "a");
        assert_eq!(mock.complete(&req("x", "2")).unwrap(), "b");
        assert!(mock.complete(&req("x", "3")).is_err());
    }

    #[test]
    fn script_file_parses() {
        let json = r#"{
            "strict": true,
            "rules": [
                {"purpose": "gate", "replies": ["FINAL: NO", {"fail": "server"}]},
                {"contains": "hello", "replies": ["hi"], "sticky": true}
            ]
        }"#;
        let script = MockScript::from_json(json).unwrap();
        assert!(script.strict);
        assert_eq!(script.rules[0].matcher, Matcher::Purpose("gate".into()));
        assert_eq!(script.rules[0].replies[1], MockReply::fail(ErrorKind::Server));
        assert!(script.rules[1].sticky);
    }
}
