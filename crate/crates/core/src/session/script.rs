//! Scripted sessions: a trainee transcript plus a mock provider script, run
//! end to end without network access. Used for demos and regression tests.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{EventRecord, MemoryStore, SessionError, SessionService, SessionState, TurnResult};
use crate::classifier::Backend;
use crate::config::{Config, IdScheme};
use crate::gateway::{Gateway, MockProvider, MockScript, RetryPolicy, ScriptFile};
use crate::simulator::ProfileRegistry;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionScript {
    pub profile_id: String,
    /// Trainee messages, one per turn.
    pub turns: Vec<String>,
    pub mock: ScriptFile,
}

#[derive(Debug, Clone)]
pub struct ScriptRun {
    pub results: Vec<TurnResult>,
    pub events: Vec<EventRecord>,
    pub state: SessionState,
    /// Chat requests the mock received.
    pub provider_calls: usize,
}

impl SessionScript {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| SessionError::Replay(format!("invalid session script: {e}")))
    }

    /// Runs every turn in order against an in-memory store with sequential
    /// ids, stopping at the first failed turn.
    pub fn run(&self, mut config: Config, profiles: ProfileRegistry) -> Result<ScriptRun, SessionError> {
        config.session.id_scheme = IdScheme::Sequential;
        config.session.data_dir = None;
        let provider = Arc::new(MockProvider::new(MockScript::from(self.mock.clone())));
        let gateway = Gateway::new(provider.clone()).with_retry(RetryPolicy::immediate(1));
        let service = SessionService::new(
            config,
            Arc::new(gateway),
            Backend::PromptSkillList,
            profiles,
            Arc::new(MemoryStore::default()),
        )?;
        let id = service.create_session(&self.profile_id)?.id;
        let results = self
            .turns
            .iter()
            .map(|text| service.post_message(&id, text))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScriptRun {
            results,
            events: service.events(&id)?,
            state: service.get(&id)?,
            provider_calls: provider.calls(),
        })
    }
}
