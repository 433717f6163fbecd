//! Motivational Interviewing controller: per-stage skill counts, the skill
//! score, threshold checks, the LLM stage gate and cost/benefit ledger edits.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::{CostBenefitTable, LedgerSide, MiStage, Skill, StageInfoSet, StageWeightTable, Utterance};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::template;

pub const GATE_PURPOSE: &str = "gate";
pub const GATE_REPAIR_PURPOSE: &str = "gate-repair";
pub const COST_BENEFIT_PURPOSE: &str = "cost-benefit";

/// Marker that introduces the gate's decision.
pub const VERDICT_MARKER: &str = "FINAL:";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MiError {
    #[error("{0:?} is the last stage")]
    NoNextStage(MiStage),
    #[error("{0:?} is not a progression target")]
    NotATarget(MiStage),
}

/// Occurrences of each label within the current stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct SkillCounts([u32; 21]);

impl SkillCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, skill: Skill) -> u32 {
        self.0[skill.index()]
    }

    pub fn set(&mut self, skill: Skill, n: u32) {
        self.0[skill.index()] = n;
    }

    pub fn add(&mut self, skill: Skill) {
        self.0[skill.index()] += 1;
    }

    pub fn add_all<'a>(&mut self, skills: impl IntoIterator<Item = &'a Skill>) {
        for s in skills {
            self.add(*s);
        }
    }

    pub fn reset(&mut self) {
        self.0 = [0; 21];
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|n| *n == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Skill, u32)> + '_ {
        Skill::ALL.iter().map(|s| (*s, self.0[s.index()]))
    }

    pub fn nonzero(&self) -> BTreeMap<Skill, u32> {
        self.iter().filter(|(_, n)| *n > 0).collect()
    }
}

impl FromIterator<(Skill, u32)> for SkillCounts {
    fn from_iter<I: IntoIterator<Item = (Skill, u32)>>(iter: I) -> Self {
        let mut counts = Self::default();
        for (s, n) in iter {
            counts.set(s, n);
        }
        counts
    }
}

impl Serialize for SkillCounts {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.nonzero().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SkillCounts {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(BTreeMap::<Skill, u32>::deserialize(deserializer)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiConfig {
    /// Logarithm base of the damping term; natural log when absent.
    pub log_base: Option<f64>,
    pub threshold_contemplation: f64,
    pub threshold_preparation: f64,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self { log_base: None, threshold_contemplation: 0.4, threshold_preparation: 0.6 }
    }
}

impl MiConfig {
    /// Score needed to enter `target`.
    pub fn threshold_for(&self, target: MiStage) -> Result<f64, MiError> {
        match target {
            MiStage::Contemplation => Ok(self.threshold_contemplation),
            MiStage::Preparation => Ok(self.threshold_preparation),
            MiStage::PreContemplation => Err(MiError::NotATarget(target)),
        }
    }

    /// Next stage from `current` and the score needed to reach it.
    pub fn next_threshold(&self, current: MiStage) -> Result<(MiStage, f64), MiError> {
        let next = current.next().ok_or(MiError::NoNextStage(current))?;
        Ok((next, self.threshold_for(next)?))
    }

    pub fn score(&self, counts: &SkillCounts, stage: MiStage) -> f64 {
        skill_score_with_base(counts, stage, StageWeightTable::builtin(), self.log_base)
    }
}

/// `threshold_for` under default settings: 0.4 into Contemplation, 0.6 into
/// Preparation.
pub fn threshold_for(target: MiStage) -> Result<f64, MiError> {
    MiConfig::default().threshold_for(target)
}

/// `sum_j w_j * ln(1 + n_j)` over all 21 labels.
pub fn skill_score(counts: &SkillCounts, stage: MiStage, weights: &StageWeightTable) -> f64 {
    skill_score_with_base(counts, stage, weights, None)
}

pub fn skill_score_with_base(counts: &SkillCounts, stage: MiStage, weights: &StageWeightTable, log_base: Option<f64>) -> f64 {
    let scale = log_base.map_or(1.0, f64::ln);
    counts
        .iter()
        .map(|(skill, n)| {
            let w = f64::from(weights.weight_for(skill, stage));
            if w == 0.0 || n == 0 {
                0.0
            } else {
                w * f64::from(n).ln_1p() / scale
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Parsed,
    /// No decision marker even after a re-ask.
    Unparseable,
    /// The gateway failed; the verdict is a rejection.
    GatewayError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub reasoning: String,
    pub approved: bool,
    pub status: VerdictStatus,
}

/// Reads the decision from the last line carrying the marker.
pub fn parse_verdict(text: &str) -> Option<bool> {
    let marker = VERDICT_MARKER.to_ascii_uppercase();
    text.lines().rev().find_map(|line| {
        let upper = line.to_ascii_uppercase();
        let at = upper.rfind(&marker)?;
        let answer = upper[at + marker.len()..].trim().trim_start_matches(['*', '"', '\'', '`', ' ']);
        if answer.starts_with("YES") {
            Some(true)
        } else if answer.starts_with("NO") {
            Some(false)
        } else {
            None
        }
    })
}

pub fn render_table(table: &CostBenefitTable) -> String {
    let mut out = String::from("Costs of change:\n");
    for c in &table.costs {
        out.push_str(&format!("- {c}\n"));
    }
    out.push_str("Benefits of change:\n");
    for b in &table.benefits {
        out.push_str(&format!("- {b}\n"));
    }
    out
}

pub fn render_transcript(utterances: &[Utterance]) -> String {
    utterances.iter().map(|u| format!("{}: {}\n", u.speaker.tag(), u.text)).collect()
}

pub fn build_gate_prompt(stage: MiStage, transcript: &[Utterance], table: &CostBenefitTable) -> Result<String, MiError> {
    let next = stage.next().ok_or(MiError::NoNextStage(stage))?;
    let info = StageInfoSet::builtin().get(stage);
    Ok(template::render(
        template::GATE,
        &[
            ("stage", stage.name()),
            ("next_stage", next.name()),
            ("role", &info.role),
            ("core_stance", &info.core_stance),
            ("communication_style", &info.communication_style),
            ("table", &render_table(table)),
            ("transcript", &render_transcript(transcript)),
        ],
    ))
}

/// Asks the gate whether the current stage's goals are met. A response
/// without a readable decision gets one re-ask; a second miss is a
/// rejection with status `Unparseable`.
pub fn gate_evaluate(
    stage: MiStage,
    transcript: &[Utterance],
    table: &CostBenefitTable,
    gateway: &Gateway,
) -> Result<GateVerdict, GatewayError> {
    let prompt = build_gate_prompt(stage, transcript, table).map_err(|e| GatewayError {
        kind: crate::gateway::ErrorKind::Precondition,
        attempts: 0,
        message: e.to_string(),
    })?;
    let mut messages = vec![ChatMessage::user(prompt)];
    let first = gateway.chat(&ChatRequest::new(GATE_PURPOSE, messages.clone()))?.text;
    if let Some(approved) = parse_verdict(&first) {
        return Ok(GateVerdict { reasoning: first, approved, status: VerdictStatus::Parsed });
    }
    tracing::warn!("gate answer had no decision marker; asking again");
    messages.push(ChatMessage::assistant(first));
    messages.push(ChatMessage::user(template::GATE_REPAIR));
    let second = gateway.chat(&ChatRequest::new(GATE_REPAIR_PURPOSE, messages))?.text;
    Ok(match parse_verdict(&second) {
        Some(approved) => GateVerdict { reasoning: second, approved, status: VerdictStatus::Parsed },
        None => GateVerdict { reasoning: second, approved: false, status: VerdictStatus::Unparseable },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProgressionDecision {
    /// Score below the next stage's threshold; the gate was not consulted.
    BelowThreshold { stage: MiStage, target: MiStage, score: f64, threshold: f64 },
    GateRejected { stage: MiStage, target: MiStage, score: f64, threshold: f64, verdict: GateVerdict },
    Advanced { from: MiStage, to: MiStage, score: f64, threshold: f64, verdict: GateVerdict },
    /// Already in the last stage.
    Terminal { stage: MiStage },
}

impl ProgressionDecision {
    pub fn verdict(&self) -> Option<&GateVerdict> {
        match self {
            ProgressionDecision::GateRejected { verdict, .. } | ProgressionDecision::Advanced { verdict, .. } => Some(verdict),
            _ => None,
        }
    }

    pub fn advanced_to(&self) -> Option<MiStage> {
        match self {
            ProgressionDecision::Advanced { to, .. } => Some(*to),
            _ => None,
        }
    }
}

/// The controller's mutable state for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiState {
    pub stage: MiStage,
    pub counts: SkillCounts,
    pub score: f64,
    pub table: CostBenefitTable,
}

impl MiState {
    pub fn new() -> Self {
        Self::at(MiStage::PreContemplation)
    }

    pub fn at(stage: MiStage) -> Self {
        Self { stage, counts: SkillCounts::new(), score: 0.0, table: CostBenefitTable::default_for(stage) }
    }

    pub fn record_skills(&mut self, skills: &[Skill], config: &MiConfig) {
        self.counts.add_all(skills);
        self.score = config.score(&self.counts, self.stage);
    }

    /// Enters `to` with zeroed counts and the stage's default ledger.
    pub fn advance(&mut self, to: MiStage) {
        *self = Self::at(to);
    }
}

impl Default for MiState {
    fn default() -> Self {
        Self::new()
    }
}

/// Checks the threshold and, if met, the gate. Advances `state` on approval.
/// Gateway failures count as rejections.
pub fn maybe_progress(state: &mut MiState, stage_transcript: &[Utterance], config: &MiConfig, gateway: &Gateway) -> ProgressionDecision {
    let stage = state.stage;
    let Ok((target, threshold)) = config.next_threshold(stage) else {
        return ProgressionDecision::Terminal { stage };
    };
    let score = state.score;
    if score < threshold {
        return ProgressionDecision::BelowThreshold { stage, target, score, threshold };
    }
    let verdict = gate_evaluate(stage, stage_transcript, &state.table, gateway).unwrap_or_else(|e| {
        tracing::warn!(error = %e, "gate call failed; staying in stage");
        GateVerdict { reasoning: e.to_string(), approved: false, status: VerdictStatus::GatewayError }
    });
    if verdict.approved {
        state.advance(target);
        ProgressionDecision::Advanced { from: stage, to: target, score, threshold, verdict }
    } else {
        ProgressionDecision::GateRejected { stage, target, score, threshold, verdict }
    }
}

/// Whether the ledger is edited after client replies in `stage`.
pub fn ledger_updates_in(stage: MiStage) -> bool {
    !matches!(stage, MiStage::PreContemplation)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum DiffOp {
    Add { side: LedgerSide, text: String },
    Remove { side: LedgerSide, text: String },
    Edit { side: LedgerSide, from: String, to: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TableDiff {
    #[serde(default)]
    pub ops: Vec<DiffOp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerUpdate {
    pub table: CostBenefitTable,
    pub applied: Vec<DiffOp>,
    pub warnings: Vec<String>,
}

/// Applies the ops that keep both sides free of duplicates and empty
/// entries; the rest are reported as warnings.
pub fn apply_diff(table: &CostBenefitTable, diff: &TableDiff) -> LedgerUpdate {
    let mut table = table.clone();
    let mut applied = Vec::new();
    let mut warnings = Vec::new();
    for op in &diff.ops {
        let outcome = match op {
            DiffOp::Add { side, text } => {
                let text = text.trim();
                let entries = table.side_mut(*side);
                if text.is_empty() {
                    Err("empty entry".to_string())
                } else if entries.iter().any(|e| e == text) {
                    Err(format!("{text:?} is already listed"))
                } else {
                    entries.push(text.to_string());
                    Ok(())
                }
            }
            DiffOp::Remove { side, text } => {
                let entries = table.side_mut(*side);
                match entries.iter().position(|e| e == text.trim()) {
                    Some(i) => {
                        entries.remove(i);
                        Ok(())
                    }
                    None => Err(format!("cannot remove {text:?}: not listed")),
                }
            }
            DiffOp::Edit { side, from, to } => {
                let to = to.trim();
                let entries = table.side_mut(*side);
                match entries.iter().position(|e| e == from.trim()) {
                    None => Err(format!("cannot edit {from:?}: not listed")),
                    Some(_) if to.is_empty() => Err("empty entry".to_string()),
                    Some(i) if entries.iter().enumerate().any(|(j, e)| j != i && e == to) => {
                        Err(format!("{to:?} is already listed"))
                    }
                    Some(i) => {
                        entries[i] = to.to_string();
                        Ok(())
                    }
                }
            }
        };
        match outcome {
            Ok(()) => applied.push(op.clone()),
            Err(w) => {
                tracing::warn!(warning = %w, "skipped ledger edit");
                warnings.push(w);
            }
        }
    }
    LedgerUpdate { table, applied, warnings }
}

/// Parses a diff from model output, tolerating text around the JSON object.
pub fn parse_diff(raw: &str) -> Result<TableDiff, String> {
    let start = raw.find('{').ok_or("no JSON object in response")?;
    let end = raw.rfind('}').ok_or("no JSON object in response")?;
    if end < start {
        return Err("no JSON object in response".into());
    }
    serde_json::from_str(&raw[start..=end]).map_err(|e| e.to_string())
}

pub fn build_cost_benefit_prompt(table: &CostBenefitTable, recent: &[Utterance]) -> String {
    template::render(
        template::COST_BENEFIT,
        &[("stage", table.stage.name()), ("table", &render_table(table)), ("recent", &render_transcript(recent))],
    )
}

/// Asks the model for ledger edits prompted by the latest exchange. Any
/// failure leaves the table as it was.
pub fn update_cost_benefit(table: &CostBenefitTable, recent: &[Utterance], gateway: &Gateway) -> LedgerUpdate {
    let request = ChatRequest::new(COST_BENEFIT_PURPOSE, vec![ChatMessage::user(build_cost_benefit_prompt(table, recent))]).structured();
    let unchanged = |warning: String| {
        tracing::warn!(%warning, "ledger left unchanged");
        LedgerUpdate { table: table.clone(), applied: Vec::new(), warnings: vec![warning] }
    };
    match gateway.chat(&request) {
        Ok(completion) => match parse_diff(&completion.text) {
            Ok(diff) => apply_diff(table, &diff),
            Err(e) => unchanged(format!("malformed diff: {e}")),
        },
        Err(e) => unchanged(format!("ledger update failed: {e}")),
    }
}
