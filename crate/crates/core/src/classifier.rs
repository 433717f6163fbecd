//! Counseling-skill classification of a social worker message.
//!
//! LLM backends render a prompt, call the gateway and parse the label list
//! out of free text. The scores backend thresholds externally produced
//! confidence scores looked up by sample key.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedTurn, TranscriptCorpus};
use crate::domain::{parse_skill_label, Skill, Speaker, Taxonomy, Utterance};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::metrics::PredictionRecord;
use crate::retrieval::{RetrievalError, Retriever, RetrieverKind};
use crate::template;
use crate::thresholds::{threshold_row, ConfidenceMatrix, ThresholdVector};

pub const PURPOSE: &str = "classify";

/// Utterances immediately preceding the target that are shown to the
/// classifier: previous client message, previous worker message, current
/// client message.
pub const DEFAULT_HISTORY_WINDOW: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("target utterance is empty")]
    EmptyTarget,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("no confidence scores for sample {0:?}")]
    ScoreSourceMissing(String),
    #[error("in-context backend needs k >= 1")]
    InvalidK,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationRequest {
    /// Chronological, at most the configured window.
    pub history: Vec<Utterance>,
    pub target: String,
    /// Key into a confidence-score source, `session#turn`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_key: Option<String>,
}

impl ClassificationRequest {
    pub fn new(history: Vec<Utterance>, target: impl Into<String>) -> Self {
        Self { history, target: target.into(), sample_key: None }
    }

    pub fn with_key(mut self, key: impl Into<String>) -> Self {
        self.sample_key = Some(key.into());
        self
    }

    /// Keeps the last `window` utterances of a conversation.
    pub fn from_conversation(conversation: &[Utterance], window: usize, target: impl Into<String>) -> Self {
        let start = conversation.len().saturating_sub(window);
        Self::new(conversation[start..].to_vec(), target)
    }

    /// Request for a corpus turn: previous pair (if any) plus the client
    /// message, keyed by the turn's sample key.
    pub fn for_turn(corpus: &TranscriptCorpus, turn: &AnnotatedTurn) -> Self {
        let mut history = Vec::with_capacity(3);
        if let Some(prev) = corpus.previous_turn(turn) {
            history.push(Utterance::client(0, prev.client_text.clone()));
            history.push(Utterance::worker(1, prev.worker_text.clone()));
        }
        let n = history.len() as u32;
        history.push(Utterance::client(n, turn.client_text.clone()));
        Self::new(history, turn.worker_text.clone()).with_key(turn.key())
    }

    /// Text used to query a demonstration pool: the latest client message
    /// followed by the target, matching how pool entries are indexed.
    pub fn retrieval_query(&self) -> String {
        match self.history.iter().rev().find(|u| u.speaker == Speaker::Client) {
            Some(c) => format!("{} {}", c.text, self.target),
            None => self.target.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    /// Most likely first, no duplicates, never empty.
    pub skills: Vec<Skill>,
    pub backend_id: String,
    pub raw_output: String,
    #[serde(with = "millis")]
    pub latency: Duration,
    /// Output fragments that did not name a known skill.
    #[serde(default)]
    pub skipped_tokens: usize,
    /// Demonstrations shown to an in-context backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demonstrations: Option<usize>,
    /// Highest-scoring label when the scores backend fell back to No-Skills.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_below_threshold: Option<(Skill, f64)>,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptVariant {
    SkillOnly,
    SkillDefEx,
}

#[derive(Debug, Clone)]
pub enum Backend {
    PromptSkillList,
    PromptSkillDefEx,
    InContext { retriever: Arc<Retriever>, k: usize },
    Scores { thresholds: ThresholdVector, source: Arc<ConfidenceMatrix> },
}

impl Backend {
    pub fn id(&self) -> &'static str {
        match self {
            Backend::PromptSkillList => "baseline",
            Backend::PromptSkillDefEx => "baseline-defex",
            Backend::InContext { retriever, .. } => match retriever.kind() {
                RetrieverKind::Bm25 => "icl-bm25",
                RetrieverKind::Dense => "icl-dense",
            },
            Backend::Scores { .. } => "scores",
        }
    }
}

fn label_list() -> String {
    Skill::ALL.iter().map(|s| format!("- {}\n", s.name())).collect()
}

fn definitions_block() -> String {
    let mut out = String::from("\nDefinitions and examples:\n");
    for (skill, label) in Taxonomy::builtin().labels() {
        if skill.is_no_skills() {
            continue;
        }
        out.push_str(&format!("\n{}: {}\n", label.display_name, label.definition));
        for example in &label.examples {
            out.push_str(&format!("  Example: {example}\n"));
        }
    }
    out
}

fn history_block(history: &[Utterance]) -> String {
    if history.is_empty() {
        return String::new();
    }
    let mut out = String::from("Conversation so far:\n");
    for u in history {
        out.push_str(&format!("{}: {}\n", u.speaker.tag(), u.text));
    }
    out.push('\n');
    out
}

pub fn build_baseline_prompt(request: &ClassificationRequest, variant: PromptVariant) -> String {
    let definitions = match variant {
        PromptVariant::SkillOnly => String::new(),
        PromptVariant::SkillDefEx => definitions_block(),
    };
    template::render(
        template::CLASSIFY_BASELINE,
        &[
            ("labels", &label_list()),
            ("definitions", &definitions),
            ("history", &history_block(&request.history)),
            ("target", &request.target),
        ],
    )
}

/// Renders demonstrations in the order given, which callers keep as
/// retrieval rank order.
pub fn build_icl_prompt(request: &ClassificationRequest, demonstrations: &[&AnnotatedTurn]) -> String {
    let mut examples = String::new();
    for (i, demo) in demonstrations.iter().enumerate() {
        let skills: Vec<&str> = demo.ground_truth.iter().map(|s| s.name()).collect();
        examples.push_str(&format!(
            "Example {}:\nClient: {}\nSocial worker: {}\nSkills: {}\n\n",
            i + 1,
            demo.client_text,
            demo.worker_text,
            skills.join(", ")
        ));
    }
    template::render(
        template::CLASSIFY_ICL,
        &[
            ("examples", &examples),
            ("labels", &label_list()),
            ("history", &history_block(&request.history)),
            ("target", &request.target),
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSkills {
    pub skills: Vec<Skill>,
    pub skipped: usize,
}

fn strip_marker(piece: &str) -> &str {
    let s = piece.trim_start();
    let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    let s = if digits > 0 && s[digits..].starts_with(['.', ')']) { &s[digits + 1..] } else { s };
    s.trim_start_matches(['-', '*', '\u{2022}', '#', '>']).trim()
}

fn clean(candidate: &str) -> &str {
    candidate.trim().trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*' | '.' | '\u{201c}' | '\u{201d}')).trim()
}

fn candidates(piece: &str) -> Vec<&str> {
    let piece = strip_marker(piece);
    let piece = piece.split('(').next().unwrap_or("");
    match piece.split_once(':') {
        Some((before, after)) => vec![clean(before), clean(after)],
        None => vec![clean(piece)],
    }
}

/// Extracts skill names in order of first mention. Fragments are split on
/// newlines, commas and semicolons; list markers, quotes and trailing
/// explanations are stripped. Unknown fragments are skipped and counted. An
/// output naming no skill yields `[No-Skills]`.
pub fn parse_skill_output(raw: &str) -> ParsedSkills {
    let mut skills = Vec::new();
    let mut skipped = 0;
    for piece in raw.split(['\n', ',', ';']) {
        let cands = candidates(piece);
        if cands.iter().all(|c| c.is_empty()) {
            continue;
        }
        match cands.iter().find_map(|c| parse_skill_label(c).ok()) {
            Some(skill) if !skills.contains(&skill) => skills.push(skill),
            Some(_) => {}
            None => skipped += 1,
        }
    }
    if skills.len() > 1 {
        skills.retain(|s| !s.is_no_skills());
    }
    if skills.is_empty() {
        skills.push(Skill::NoSkills);
    }
    ParsedSkills { skills, skipped }
}

fn llm_classify(prompt: String, gateway: &Gateway) -> Result<(ParsedSkills, String), GatewayError> {
    let request = ChatRequest::new(PURPOSE, vec![ChatMessage::user(prompt)]);
    let completion = gateway.chat(&request)?;
    Ok((parse_skill_output(&completion.text), completion.text))
}

pub fn classify(request: &ClassificationRequest, backend: &Backend, gateway: &Gateway) -> Result<ClassificationResult, ClassifyError> {
    if request.target.trim().is_empty() {
        return Err(ClassifyError::EmptyTarget);
    }
    let started = Instant::now();
    let mut result = ClassificationResult {
        skills: Vec::new(),
        backend_id: backend.id().to_string(),
        raw_output: String::new(),
        latency: Duration::ZERO,
        skipped_tokens: 0,
        demonstrations: None,
        top_below_threshold: None,
    };
    match backend {
        Backend::PromptSkillList | Backend::PromptSkillDefEx => {
            let variant = if matches!(backend, Backend::PromptSkillList) {
                PromptVariant::SkillOnly
            } else {
                PromptVariant::SkillDefEx
            };
            let (parsed, raw) = llm_classify(build_baseline_prompt(request, variant), gateway)?;
            result.skills = parsed.skills;
            result.skipped_tokens = parsed.skipped;
            result.raw_output = raw;
        }
        Backend::InContext { retriever, k } => {
            if *k == 0 {
                return Err(ClassifyError::InvalidK);
            }
            let demos = retriever.demonstrations(&request.retrieval_query(), *k, gateway)?;
            result.demonstrations = Some(demos.len());
            let (parsed, raw) = llm_classify(build_icl_prompt(request, &demos), gateway)?;
            result.skills = parsed.skills;
            result.skipped_tokens = parsed.skipped;
            result.raw_output = raw;
        }
        Backend::Scores { thresholds, source } => {
            let key = request.sample_key.clone().unwrap_or_default();
            let row = source.row(&key).ok_or(ClassifyError::ScoreSourceMissing(key))?;
            let t = thresholds.aligned_to(&source.labels);
            result.skills = threshold_row(&source.labels, row, &t);
            if result.skills == [Skill::NoSkills] {
                result.top_below_threshold = (0..row.len())
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                    .map(|j| (source.labels[j], row[j]));
            }
            result.raw_output = serde_json::to_string(row).expect("scores serialize");
        }
    }
    result.latency = started.elapsed();
    Ok(result)
}

/// Classifies every turn of a corpus, in parallel, returning results in
/// corpus order.
pub fn classify_corpus(
    corpus: &TranscriptCorpus,
    backend: &Backend,
    gateway: &Gateway,
) -> Result<Vec<(PredictionRecord, ClassificationResult)>, ClassifyError> {
    if let Backend::InContext { retriever, k } = backend {
        if retriever.pool().len() < *k {
            tracing::warn!(pool = retriever.pool().len(), k, "demonstration pool smaller than k; using the whole pool");
        }
    }
    corpus
        .turns
        .par_iter()
        .map(|turn| {
            let request = ClassificationRequest::for_turn(corpus, turn);
            let result = classify(&request, backend, gateway)?;
            let record = PredictionRecord {
                key: turn.key(),
                predicted: result.skills.iter().copied().collect(),
                ground_truth: turn.ground_truth.clone(),
            };
            Ok((record, result))
        })
        .collect()
}
