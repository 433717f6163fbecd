use serde::{Deserialize, Serialize};

use super::DomainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Client,
    Worker,
}

impl Speaker {
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::Client => "Client",
            Speaker::Worker => "Social worker",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub turn_index: u32,
}

impl Utterance {
    pub fn client(turn_index: u32, text: impl Into<String>) -> Self {
        Self { speaker: Speaker::Client, text: text.into(), turn_index }
    }

    pub fn worker(turn_index: u32, text: impl Into<String>) -> Self {
        Self { speaker: Speaker::Worker, text: text.into(), turn_index }
    }
}

/// Checks that a conversation starts with the client, alternates speakers and
/// has strictly increasing turn indices.
pub fn validate_conversation(utterances: &[Utterance]) -> Result<(), DomainError> {
    for (i, u) in utterances.iter().enumerate() {
        let expected = if i % 2 == 0 { Speaker::Client } else { Speaker::Worker };
        if u.speaker != expected {
            return Err(DomainError::InvalidConversation(format!(
                "utterance {i} spoken by {:?}, expected {:?}",
                u.speaker, expected
            )));
        }
        if i > 0 && u.turn_index <= utterances[i - 1].turn_index {
            return Err(DomainError::InvalidConversation(format!(
                "turn index {} does not increase",
                u.turn_index
            )));
        }
    }
    Ok(())
}
