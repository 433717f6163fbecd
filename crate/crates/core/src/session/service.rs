//! Session lifecycle and the per-turn pipeline.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::store::restore;
use super::{Event, EventRecord, EventStore, SessionError, SessionState, Snapshot};
use crate::classifier::{classify, Backend, ClassificationRequest, ClassificationResult};
use crate::config::{Config, IdScheme};
use crate::domain::{CostBenefitTable, MiStage, Skill, Utterance};
use crate::gateway::Gateway;
use crate::mi::{ledger_updates_in, maybe_progress, ProgressionDecision, SkillCounts};
use crate::simulator::{generate_reply, ClientReply, DynamicState, ProfileRegistry, ProfileSummary, ReplyContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub session_id: String,
    pub turn: u32,
    pub reply: ClientReply,
    pub skills: ClassificationResult,
    pub progression: ProgressionDecision,
}

/// What a trainee sees of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub profile_id: String,
    pub turns: u32,
    pub history: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<MiStage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSkills {
    pub turn: u32,
    pub skills: Vec<Skill>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: MiStage,
    /// Turn after which the stage was entered; 0 for the starting stage.
    pub turn: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSummary {
    pub session_id: String,
    pub skill_counts: BTreeMap<Skill, u32>,
    pub total_classified: u32,
    /// Counseling skills never identified in the session.
    pub unused_skills: Vec<Skill>,
    pub stage_trajectory: Vec<StageEntry>,
    pub per_turn: Vec<TurnSkills>,
}

impl FeedbackSummary {
    pub fn from_events(session_id: &str, records: &[EventRecord]) -> Self {
        let mut counts = SkillCounts::new();
        let mut per_turn = Vec::new();
        let mut trajectory = Vec::new();
        for record in records {
            match &record.event {
                Event::SessionCreated { stage, .. } => trajectory.push(StageEntry { stage: *stage, turn: 0 }),
                Event::SkillsClassified { turn, skills, .. } => {
                    counts.add_all(skills);
                    per_turn.push(TurnSkills { turn: *turn, skills: skills.clone() });
                }
                Event::ProgressionEvaluated { turn, decision: ProgressionDecision::Advanced { to, .. } } => {
                    trajectory.push(StageEntry { stage: *to, turn: *turn });
                }
                _ => {}
            }
        }
        Self {
            session_id: session_id.to_string(),
            skill_counts: counts.nonzero(),
            total_classified: counts.total(),
            unused_skills: Skill::COUNSELING.iter().copied().filter(|s| counts.get(*s) == 0).collect(),
            stage_trajectory: trajectory,
            per_turn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePoint {
    pub turn: u32,
    pub stage: MiStage,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub turn: u32,
    pub decision: ProgressionDecision,
}

/// Everything an instructor may inspect: stage, scores, gate decisions and
/// the simulated client's internal state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructorView {
    pub session_id: String,
    pub profile_id: String,
    pub stage: MiStage,
    pub score: f64,
    pub counts: SkillCounts,
    pub table: CostBenefitTable,
    pub dynamic: DynamicState,
    pub score_trace: Vec<ScorePoint>,
    /// Progression decisions that consulted the gate.
    pub verdicts: Vec<VerdictEntry>,
    pub stage_trajectory: Vec<StageEntry>,
}

struct Committed {
    state: SessionState,
    events: Vec<EventRecord>,
}

struct Slot {
    committed: RwLock<Committed>,
    busy: AtomicBool,
}

struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

/// Working copy of a session during a turn.
struct Turn {
    state: SessionState,
    events: Vec<EventRecord>,
}

impl Turn {
    fn emit(&mut self, event: Event) -> Result<(), SessionError> {
        let record = EventRecord { seq: self.state.applied + 1, event };
        self.state.apply(&record)?;
        self.events.push(record);
        Ok(())
    }
}

pub struct SessionService {
    config: Config,
    gateway: Arc<Gateway>,
    backend: Backend,
    profiles: ProfileRegistry,
    store: Arc<dyn EventStore>,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    create_lock: Mutex<()>,
    next_seq_id: AtomicU64,
}

impl SessionService {
    /// Builds the service and restores every session found in `store`.
    pub fn new(
        config: Config,
        gateway: Arc<Gateway>,
        backend: Backend,
        profiles: ProfileRegistry,
        store: Arc<dyn EventStore>,
    ) -> Result<Self, SessionError> {
        let mut sessions = HashMap::new();
        for id in store.session_ids()? {
            if let Some((state, events)) = restore(store.as_ref(), &id)? {
                sessions.insert(id, Arc::new(Slot { committed: RwLock::new(Committed { state, events }), busy: AtomicBool::new(false) }));
            }
        }
        let next = sessions.len() as u64 + 1;
        Ok(Self {
            config,
            gateway,
            backend,
            profiles,
            store,
            sessions: RwLock::new(sessions),
            create_lock: Mutex::new(()),
            next_seq_id: AtomicU64::new(next),
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn profiles(&self) -> Vec<ProfileSummary> {
        self.profiles.list()
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, SessionError> {
        self.sessions.read().get(id).cloned().ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    fn new_id(&self) -> String {
        match self.config.session.id_scheme {
            IdScheme::Uuid => uuid::Uuid::new_v4().simple().to_string(),
            IdScheme::Sequential => loop {
                let id = format!("s{:04}", self.next_seq_id.fetch_add(1, Ordering::SeqCst));
                if !self.sessions.read().contains_key(&id) {
                    break id;
                }
            },
        }
    }

    pub fn create_session(&self, profile_id: &str) -> Result<SessionState, SessionError> {
        let profile = self.profiles.get(profile_id).map_err(|_| SessionError::UnknownProfile(profile_id.to_string()))?;
        let _guard = self.create_lock.lock();
        let id = self.new_id();
        let stage = MiStage::PreContemplation;
        let record = EventRecord {
            seq: 1,
            event: Event::SessionCreated {
                session_id: id.clone(),
                profile_id: profile_id.to_string(),
                stage,
                table: CostBenefitTable::default_for(stage),
                dynamic: profile.initial_dynamic.clone(),
                opening_message: profile.opening_message.clone(),
            },
        };
        let state = SessionState::genesis(&record)?;
        self.store.append(&id, std::slice::from_ref(&record))?;
        let slot = Slot { committed: RwLock::new(Committed { state: state.clone(), events: vec![record] }), busy: AtomicBool::new(false) };
        self.sessions.write().insert(id.clone(), Arc::new(slot));
        tracing::info!(session = %id, profile = profile_id, "session created");
        Ok(state)
    }

    /// Runs one trainee turn: classify, score, client reply, ledger update,
    /// progression. Either every step succeeds and the turn's events are
    /// committed together, or nothing changes.
    pub fn post_message(&self, session_id: &str, text: &str) -> Result<TurnResult, SessionError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(SessionError::EmptyMessage);
        }
        let slot = self.slot(session_id)?;
        if slot.busy.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
            return Err(SessionError::SessionBusy(session_id.to_string()));
        }
        let _busy = BusyGuard(&slot.busy);

        let start = slot.committed.read().state.clone();
        let (result, turn) = self.run_turn(start, text)?;

        self.store.append(session_id, &turn.events)?;
        let snapshot_due = self.config.session.snapshot_every > 0 && turn.state.turns % self.config.session.snapshot_every == 0;
        {
            let mut committed = slot.committed.write();
            committed.events.extend(turn.events);
            committed.state = turn.state;
        }
        if snapshot_due {
            let state = slot.committed.read().state.clone();
            if let Err(e) = self.store.save_snapshot(&Snapshot { state }) {
                tracing::warn!(session = session_id, error = %e, "snapshot failed");
            }
        }
        Ok(result)
    }

    fn run_turn(&self, state: SessionState, text: &str) -> Result<(TurnResult, Turn), SessionError> {
        let failed = |step: &str, e: &dyn std::fmt::Display| {
            tracing::warn!(step, error = %e, "turn failed");
            SessionError::TurnFailed(format!("{step}: {e}"))
        };
        let mut turn = Turn { state, events: Vec::new() };
        let n = turn.state.turns + 1;
        let id = turn.state.id.clone();
        let prior_history = turn.state.history.clone();

        turn.emit(Event::TraineeMessage { turn: n, text: text.to_string() })?;

        let request = ClassificationRequest::from_conversation(&prior_history, self.config.classifier.history_window, text)
            .with_key(format!("{id}#{n}"));
        let skills = classify(&request, &self.backend, &self.gateway).map_err(|e| failed("classification", &e))?;
        turn.emit(Event::SkillsClassified {
            turn: n,
            skills: skills.skills.clone(),
            backend_id: skills.backend_id.clone(),
            raw_output: skills.raw_output.clone(),
            skipped_tokens: skills.skipped_tokens,
        })?;

        let stage = turn.state.stage();
        let score = self.config.mi.score(&turn.state.mi.counts, stage);
        turn.emit(Event::ScoreUpdated { turn: n, stage, score })?;

        let profile = self.profiles.get(&turn.state.profile_id).map_err(|e| failed("profile", &e))?;
        let ctx = ReplyContext {
            profile: &profile.profile,
            dynamic: &turn.state.dynamic,
            stage,
            history: &prior_history,
            worker_message: text,
            skills: &skills.skills,
        };
        let reply = generate_reply(&ctx, &self.gateway, self.config.simulator.temperature).map_err(|e| failed("client reply", &e))?;
        turn.emit(Event::ClientReplied { turn: n, message: reply.message.clone(), dynamic: reply.dynamic.clone(), raw: reply.raw.clone() })?;

        if ledger_updates_in(stage) {
            let history = &turn.state.history;
            let recent = &history[history.len().saturating_sub(2)..];
            let update = crate::mi::update_cost_benefit(&turn.state.mi.table, recent, &self.gateway);
            turn.emit(Event::LedgerUpdated { turn: n, table: update.table, applied: update.applied, warnings: update.warnings })?;
        }

        let mut scratch = turn.state.mi.clone();
        let decision = maybe_progress(&mut scratch, turn.state.stage_transcript(), &self.config.mi, &self.gateway);
        turn.emit(Event::ProgressionEvaluated { turn: n, decision: decision.clone() })?;

        let result = TurnResult { session_id: id, turn: n, reply, skills, progression: decision };
        Ok((result, turn))
    }

    /// Last committed state.
    pub fn get(&self, session_id: &str) -> Result<SessionState, SessionError> {
        Ok(self.slot(session_id)?.committed.read().state.clone())
    }

    pub fn view(&self, session_id: &str, include_stage: bool) -> Result<SessionView, SessionError> {
        let state = self.get(session_id)?;
        Ok(SessionView {
            session_id: state.id.clone(),
            profile_id: state.profile_id.clone(),
            turns: state.turns,
            stage: include_stage.then_some(state.stage()),
            history: state.history,
        })
    }

    pub fn events(&self, session_id: &str) -> Result<Vec<EventRecord>, SessionError> {
        Ok(self.slot(session_id)?.committed.read().events.clone())
    }

    pub fn feedback_report(&self, session_id: &str) -> Result<FeedbackSummary, SessionError> {
        let slot = self.slot(session_id)?;
        let committed = slot.committed.read();
        Ok(FeedbackSummary::from_events(session_id, &committed.events))
    }

    pub fn instructor_view(&self, session_id: &str) -> Result<InstructorView, SessionError> {
        let slot = self.slot(session_id)?;
        let committed = slot.committed.read();
        let state = &committed.state;
        let mut score_trace = Vec::new();
        let mut verdicts = Vec::new();
        for record in &committed.events {
            match &record.event {
                Event::ScoreUpdated { turn, stage, score } => score_trace.push(ScorePoint { turn: *turn, stage: *stage, score: *score }),
                Event::ProgressionEvaluated { turn, decision } if decision.verdict().is_some() => {
                    verdicts.push(VerdictEntry { turn: *turn, decision: decision.clone() })
                }
                _ => {}
            }
        }
        Ok(InstructorView {
            session_id: state.id.clone(),
            profile_id: state.profile_id.clone(),
            stage: state.stage(),
            score: state.mi.score,
            counts: state.mi.counts,
            table: state.mi.table.clone(),
            dynamic: state.dynamic.clone(),
            score_trace,
            verdicts,
            stage_trajectory: FeedbackSummary::from_events(session_id, &committed.events).stage_trajectory,
        })
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().keys().cloned().collect();
        ids.sort();
        ids
    }
}
