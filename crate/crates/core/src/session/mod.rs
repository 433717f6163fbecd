//! Training sessions: the per-turn pipeline, an append-only event log,
//! replay, feedback reports and the HTTP API.
//!
//! Session state is never mutated directly. Each step of a turn produces an
//! [`Event`] that is applied to a working copy; the turn's events are written
//! to the log in one append when the turn completes, and the working copy
//! replaces the committed state. Replaying the log from the start therefore
//! rebuilds the state exactly.

mod service;
mod script;
mod store;

pub mod http;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{CostBenefitTable, MiStage, Skill, Utterance};
use crate::mi::{DiffOp, MiState, ProgressionDecision};
use crate::simulator::DynamicState;

pub use service::{
    FeedbackSummary, InstructorView, ScorePoint, SessionService, SessionView, StageEntry, TurnResult, TurnSkills,
    VerdictEntry,
};
pub use script::{ScriptRun, SessionScript};
pub use store::{EventStore, FileStore, MemoryStore, Snapshot};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("unknown profile {0:?}")]
    UnknownProfile(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {0:?} already has a turn in progress")]
    SessionBusy(String),
    #[error("turn failed: {0}")]
    TurnFailed(String),
    #[error("message text is empty")]
    EmptyMessage,
    #[error("storage error: {0}")]
    Storage(String),
    #[error("event log is inconsistent: {0}")]
    Replay(String),
}

impl SessionError {
    /// Stable machine-readable kind.
    pub fn kind(&self) -> &'static str {
        match self {
            SessionError::UnknownProfile(_) => "unknown_profile",
            SessionError::UnknownSession(_) => "unknown_session",
            SessionError::SessionBusy(_) => "session_busy",
            SessionError::TurnFailed(_) => "turn_failed",
            SessionError::EmptyMessage => "bad_request",
            SessionError::Storage(_) => "storage",
            SessionError::Replay(_) => "replay",
        }
    }
}

impl From<std::io::Error> for SessionError {
    fn from(e: std::io::Error) -> Self {
        SessionError::Storage(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        session_id: String,
        profile_id: String,
        stage: MiStage,
        table: CostBenefitTable,
        dynamic: DynamicState,
        opening_message: String,
    },
    TraineeMessage { turn: u32, text: String },
    SkillsClassified { turn: u32, skills: Vec<Skill>, backend_id: String, raw_output: String, skipped_tokens: usize },
    ScoreUpdated { turn: u32, stage: MiStage, score: f64 },
    ClientReplied { turn: u32, message: String, dynamic: DynamicState, raw: String },
    LedgerUpdated { turn: u32, table: CostBenefitTable, applied: Vec<DiffOp>, warnings: Vec<String> },
    ProgressionEvaluated { turn: u32, decision: ProgressionDecision },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::SessionCreated { .. } => "session_created",
            Event::TraineeMessage { .. } => "trainee_message",
            Event::SkillsClassified { .. } => "skills_classified",
            Event::ScoreUpdated { .. } => "score_updated",
            Event::ClientReplied { .. } => "client_replied",
            Event::LedgerUpdated { .. } => "ledger_updated",
            Event::ProgressionEvaluated { .. } => "progression_evaluated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub profile_id: String,
    pub mi: MiState,
    pub history: Vec<Utterance>,
    /// Index into `history` where the current stage began.
    pub stage_start: usize,
    pub dynamic: DynamicState,
    /// Trainee turns so far.
    pub turns: u32,
    /// Events applied, equal to the last record's `seq`.
    pub applied: u64,
}

impl SessionState {
    pub fn stage(&self) -> MiStage {
        self.mi.stage
    }

    pub fn stage_transcript(&self) -> &[Utterance] {
        &self.history[self.stage_start..]
    }

    /// Starts a session from its creation record.
    pub fn genesis(record: &EventRecord) -> Result<Self, SessionError> {
        let Event::SessionCreated { session_id, profile_id, stage, table, dynamic, opening_message } = &record.event else {
            return Err(SessionError::Replay("log does not start with session_created".into()));
        };
        if record.seq != 1 {
            return Err(SessionError::Replay(format!("first record has seq {}", record.seq)));
        }
        let mut mi = MiState::at(*stage);
        mi.table = table.clone();
        Ok(Self {
            id: session_id.clone(),
            profile_id: profile_id.clone(),
            mi,
            history: vec![Utterance::client(0, opening_message.clone())],
            stage_start: 0,
            dynamic: dynamic.clone(),
            turns: 0,
            applied: 1,
        })
    }

    /// Folds one record into the state.
    pub fn apply(&mut self, record: &EventRecord) -> Result<(), SessionError> {
        if record.seq != self.applied + 1 {
            return Err(SessionError::Replay(format!("expected seq {}, found {}", self.applied + 1, record.seq)));
        }
        let turn_check = |turn: u32, expected: u32| {
            if turn == expected {
                Ok(())
            } else {
                Err(SessionError::Replay(format!("event for turn {turn} while at turn {expected}")))
            }
        };
        let next_index = self.history.len() as u32;
        match &record.event {
            Event::SessionCreated { .. } => return Err(SessionError::Replay("duplicate session_created".into())),
            Event::TraineeMessage { turn, text } => {
                turn_check(*turn, self.turns + 1)?;
                self.turns = *turn;
                self.history.push(Utterance::worker(next_index, text.clone()));
            }
            Event::SkillsClassified { turn, skills, .. } => {
                turn_check(*turn, self.turns)?;
                self.mi.counts.add_all(skills);
            }
            Event::ScoreUpdated { turn, stage, score } => {
                turn_check(*turn, self.turns)?;
                if *stage != self.mi.stage {
                    return Err(SessionError::Replay(format!("score for {stage:?} while in {:?}", self.mi.stage)));
                }
                self.mi.score = *score;
            }
            Event::ClientReplied { turn, message, dynamic, .. } => {
                turn_check(*turn, self.turns)?;
                self.history.push(Utterance::client(next_index, message.clone()));
                self.dynamic = dynamic.clone();
            }
            Event::LedgerUpdated { turn, table, .. } => {
                turn_check(*turn, self.turns)?;
                self.mi.table = table.clone();
            }
            Event::ProgressionEvaluated { turn, decision } => {
                turn_check(*turn, self.turns)?;
                if let ProgressionDecision::Advanced { from, to, .. } = decision {
                    if *from != self.mi.stage || from.next() != Some(*to) {
                        return Err(SessionError::Replay(format!("illegal transition {from:?} -> {to:?}")));
                    }
                    self.mi.advance(*to);
                    self.stage_start = self.history.len();
                }
            }
        }
        self.applied = record.seq;
        Ok(())
    }

    /// Rebuilds a session from its full log.
    pub fn replay(records: &[EventRecord]) -> Result<Self, SessionError> {
        let (first, rest) = records.split_first().ok_or_else(|| SessionError::Replay("empty log".into()))?;
        let mut state = Self::genesis(first)?;
        for record in rest {
            state.apply(record)?;
        }
        Ok(state)
    }

    /// Hex SHA-256 of the state's JSON encoding.
    pub fn state_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("state serializes");
        hex::encode(Sha256::digest(json))
    }
}

pub fn events_to_jsonl(records: &[EventRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("event serializes") + "\n")
        .collect()
}

pub fn events_from_jsonl(text: &str) -> Result<Vec<EventRecord>, SessionError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| SessionError::Replay(format!("line {}: {e}", i + 1))))
        .collect()
}
