//! Simulated client: cognitive-model prompts and structured replies whose
//! state fields are generated before the spoken message.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{IgnoredAny, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::domain::{MiStage, Skill, Speaker, StageInfoSet, Utterance};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::template;

pub const REPLY_PURPOSE: &str = "client-reply";
pub const REPAIR_PURPOSE: &str = "client-repair";
pub const DEFAULT_TEMPERATURE: f32 = 0.7;

const DANIEL_JSON: &str = include_str!("../data/profiles/daniel.json");

/// Dynamic fields in the order the model must emit them.
pub const DYNAMIC_FIELDS: [&str; 4] = ["automatic_thoughts", "emotions", "openness", "behaviors"];

#[derive(Debug, thiserror::Error)]
pub enum SimulatorError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("unknown profile {0:?}")]
    UnknownProfile(String),
    #[error("client reply failed: {0}")]
    TurnFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticProfile {
    pub profile_id: String,
    pub name: String,
    pub background: String,
    pub core_beliefs: Vec<String>,
    pub intermediate_beliefs: Vec<String>,
    pub coping_strategies: String,
    pub profile_narrative: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicState {
    pub automatic_thoughts: String,
    pub emotions: Vec<String>,
    pub openness: String,
    pub behaviors: Vec<String>,
}

/// A profile file: static fields, the initial dynamic state and the line the
/// client opens the session with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientProfile {
    pub version: u32,
    pub profile: StaticProfile,
    pub initial_dynamic: DynamicState,
    pub opening_message: String,
}

fn nonempty(field: &str, text: &str) -> Result<(), SimulatorError> {
    if text.trim().is_empty() {
        Err(SimulatorError::InvalidProfile(format!("{field} is empty")))
    } else {
        Ok(())
    }
}

fn nonempty_list(field: &str, list: &[String]) -> Result<(), SimulatorError> {
    if list.is_empty() || list.iter().any(|s| s.trim().is_empty()) {
        Err(SimulatorError::InvalidProfile(format!("{field} must be a non-empty list of non-empty entries")))
    } else {
        Ok(())
    }
}

impl ClientProfile {
    pub fn from_json(json: &str) -> Result<Self, SimulatorError> {
        let profile: ClientProfile =
            serde_json::from_str(json).map_err(|e| SimulatorError::InvalidProfile(e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let p = &self.profile;
        nonempty("profile_id", &p.profile_id)?;
        nonempty("name", &p.name)?;
        nonempty("background", &p.background)?;
        nonempty_list("core_beliefs", &p.core_beliefs)?;
        nonempty_list("intermediate_beliefs", &p.intermediate_beliefs)?;
        nonempty("coping_strategies", &p.coping_strategies)?;
        nonempty("profile_narrative", &p.profile_narrative)?;
        nonempty("opening_message", &self.opening_message)?;
        let d = &self.initial_dynamic;
        nonempty("automatic_thoughts", &d.automatic_thoughts)?;
        nonempty_list("emotions", &d.emotions)?;
        nonempty("openness", &d.openness)?;
        nonempty_list("behaviors", &d.behaviors)?;
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.profile.profile_id
    }

    /// The bundled example profile.
    pub fn daniel() -> Self {
        Self::from_json(DANIEL_JSON).expect("bundled profile is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub profile_id: String,
    pub name: String,
}

/// Profiles by id.
#[derive(Debug, Clone, Default)]
pub struct ProfileRegistry {
    profiles: BTreeMap<String, ClientProfile>,
}

impl ProfileRegistry {
    pub fn builtin() -> Self {
        let mut registry = Self::default();
        registry.insert(ClientProfile::daniel());
        registry
    }

    /// Adds every `*.json` profile in `dir` to the builtin set.
    pub fn with_dir(dir: impl AsRef<Path>) -> Result<Self, SimulatorError> {
        let mut registry = Self::builtin();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let profile = ClientProfile::from_json(&std::fs::read_to_string(&path)?)
                .map_err(|e| SimulatorError::InvalidProfile(format!("{}: {e}", path.display())))?;
            registry.insert(profile);
        }
        Ok(registry)
    }

    pub fn insert(&mut self, profile: ClientProfile) {
        self.profiles.insert(profile.id().to_string(), profile);
    }

    pub fn get(&self, id: &str) -> Result<&ClientProfile, SimulatorError> {
        self.profiles.get(id).ok_or_else(|| SimulatorError::UnknownProfile(id.to_string()))
    }

    pub fn list(&self) -> Vec<ProfileSummary> {
        self.profiles
            .values()
            .map(|p| ProfileSummary { profile_id: p.profile.profile_id.clone(), name: p.profile.name.clone() })
            .collect()
    }
}

fn bullets(items: &[String]) -> String {
    items.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
}

pub fn assemble_system_prompt(profile: &StaticProfile, dynamic: &DynamicState, stage: MiStage, skills: &[Skill]) -> String {
    let info = StageInfoSet::builtin().get(stage);
    let skills = if skills.is_empty() {
        "- none".to_string()
    } else {
        skills.iter().map(|s| format!("- {}", s.name())).collect::<Vec<_>>().join("\n")
    };
    template::render(
        template::CLIENT_SYSTEM,
        &[
            ("name", &profile.name),
            ("background", &profile.background),
            ("core_beliefs", &bullets(&profile.core_beliefs)),
            ("intermediate_beliefs", &bullets(&profile.intermediate_beliefs)),
            ("coping_strategies", &profile.coping_strategies),
            ("profile_narrative", &profile.profile_narrative),
            ("automatic_thoughts", &dynamic.automatic_thoughts),
            ("emotions", &dynamic.emotions.join(", ")),
            ("openness", &dynamic.openness),
            ("behaviors", &bullets(&dynamic.behaviors)),
            ("stage", stage.name()),
            ("role", &info.role),
            ("core_stance", &info.core_stance),
            ("communication_style", &info.communication_style),
            ("skills", &skills),
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientReply {
    pub dynamic: DynamicState,
    pub message: String,
    pub raw: String,
}

struct KeyOrder(Vec<String>);

impl<'de> Deserialize<'de> for KeyOrder {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Keys;
        impl<'de> Visitor<'de> for Keys {
            type Value = KeyOrder;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<KeyOrder, A::Error> {
                let mut keys = Vec::new();
                while let Some(key) = map.next_key::<String>()? {
                    map.next_value::<IgnoredAny>()?;
                    keys.push(key);
                }
                Ok(KeyOrder(keys))
            }
        }
        deserializer.deserialize_map(Keys)
    }
}

#[derive(Deserialize)]
struct ReplyFields {
    automatic_thoughts: String,
    #[serde(deserialize_with = "one_or_many")]
    emotions: Vec<String>,
    openness: String,
    #[serde(deserialize_with = "one_or_many")]
    behaviors: Vec<String>,
    message: String,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

/// Parses and checks a structured reply: all four state fields present and
/// emitted before a non-empty `message`.
pub fn parse_client_reply(raw: &str) -> Result<ClientReply, String> {
    let start = raw.find('{').ok_or("response contains no JSON object")?;
    let end = raw.rfind('}').filter(|e| *e > start).ok_or("response contains no JSON object")?;
    let body = &raw[start..=end];
    let KeyOrder(keys) = serde_json::from_str(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let position = |name: &str| keys.iter().position(|k| k == name);
    let missing: Vec<&str> = DYNAMIC_FIELDS.iter().chain(["message"].iter()).copied().filter(|f| position(f).is_none()).collect();
    if !missing.is_empty() {
        return Err(format!("missing fields: {}", missing.join(", ")));
    }
    let message_at = position("message").unwrap();
    if let Some(late) = DYNAMIC_FIELDS.iter().find(|f| position(f).unwrap() > message_at) {
        return Err(format!("field {late:?} must come before \"message\""));
    }
    let fields: ReplyFields = serde_json::from_str(body).map_err(|e| format!("invalid field types: {e}"))?;
    if fields.message.trim().is_empty() {
        return Err("message is empty".into());
    }
    Ok(ClientReply {
        dynamic: DynamicState {
            automatic_thoughts: fields.automatic_thoughts,
            emotions: fields.emotions,
            openness: fields.openness,
            behaviors: fields.behaviors,
        },
        message: fields.message,
        raw: raw.to_string(),
    })
}

/// Everything one reply is generated from.
#[derive(Debug, Clone, Copy)]
pub struct ReplyContext<'a> {
    pub profile: &'a StaticProfile,
    pub dynamic: &'a DynamicState,
    pub stage: MiStage,
    /// Conversation before the worker's new message.
    pub history: &'a [Utterance],
    pub worker_message: &'a str,
    pub skills: &'a [Skill],
}

pub fn build_messages(ctx: &ReplyContext<'_>) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::system(assemble_system_prompt(ctx.profile, ctx.dynamic, ctx.stage, ctx.skills))];
    for u in ctx.history {
        messages.push(match u.speaker {
            Speaker::Client => ChatMessage::assistant(u.text.clone()),
            Speaker::Worker => ChatMessage::user(u.text.clone()),
        });
    }
    messages.push(ChatMessage::user(ctx.worker_message));
    messages
}

/// Requests a structured reply, with one repair round if the first answer
/// is unusable. Nothing is mutated; the caller adopts the returned state.
pub fn generate_reply(ctx: &ReplyContext<'_>, gateway: &Gateway, temperature: f32) -> Result<ClientReply, SimulatorError> {
    let failed = |e: GatewayError| SimulatorError::TurnFailed(e.to_string());
    let mut messages = build_messages(ctx);
    let first = gateway
        .chat(&ChatRequest::new(REPLY_PURPOSE, messages.clone()).temperature(temperature).structured())
        .map_err(failed)?
        .text;
    let error = match parse_client_reply(&first) {
        Ok(reply) => return Ok(reply),
        Err(e) => e,
    };
    tracing::warn!(%error, "malformed client reply; requesting a repair");
    messages.push(ChatMessage::assistant(first));
    messages.push(ChatMessage::user(template::render(template::CLIENT_REPAIR, &[("error", &error)])));
    let second = gateway
        .chat(&ChatRequest::new(REPAIR_PURPOSE, messages).temperature(temperature).structured())
        .map_err(failed)?
        .text;
    parse_client_reply(&second).map_err(|e| SimulatorError::TurnFailed(format!("malformed reply after repair: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockProvider, MockScript};
    use std::sync::Arc;

    const GOOD: &str = r#"{"automatic_thoughts": "They want something.", "emotions": ["Wary"], "openness": "Low.", "behaviors": ["Short answers"], "message": "Whatever."}"#;

    #[test]
    fn daniel_profile_loads() {
        let p = ClientProfile::daniel();
        assert_eq!(p.id(), "daniel");
        assert_eq!(p.profile.core_beliefs.len(), 5);
        assert_eq!(ProfileRegistry::builtin().list()[0].name, "Daniel");
        assert!(matches!(ProfileRegistry::builtin().get("nobody"), Err(SimulatorError::UnknownProfile(_))));
    }

    #[test]
    fn invalid_profile_rejected() {
        let mut p = ClientProfile::daniel();
        p.profile.core_beliefs.clear();
        assert!(p.validate().is_err());
    }

    #[test]
    fn system_prompt_contents() {
        let p = ClientProfile::daniel();
        let prompt = assemble_system_prompt(&p.profile, &p.initial_dynamic, MiStage::PreContemplation, &[Skill::Empathy, Skill::Validating]);
        let info = StageInfoSet::builtin().get(MiStage::PreContemplation);
        assert!(prompt.contains(&info.core_stance));
        let openness = &prompt[prompt.find("# Updating your openness").unwrap()..prompt.find("# Output format").unwrap()];
        assert!(openness.contains("Empathy") && openness.contains("Validating"));
        let order = ["# Who you are", "# Your current state", "# Your stage of change", "# Updating your openness", "# Output format"];
        let positions: Vec<usize> = order.iter().map(|h| prompt.find(h).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(prompt, assemble_system_prompt(&p.profile, &p.initial_dynamic, MiStage::PreContemplation, &[Skill::Empathy, Skill::Validating]));
    }

    #[test]
    fn reply_parsing() {
        let r = parse_client_reply(GOOD).unwrap();
        assert_eq!(r.message, "Whatever.");
        assert_eq!(r.dynamic.emotions, vec!["Wary"]);
        assert!(parse_client_reply(r#"{"message": "hi"}"#).unwrap_err().contains("missing"));
        let late = r#"{"automatic_thoughts": "a", "emotions": [], "message": "m", "openness": "o", "behaviors": []}"#;
        assert!(parse_client_reply(late).unwrap_err().contains("before"));
        let fenced = format!("```json\n{GOOD}\n```");
        assert!(parse_client_reply(&fenced).is_ok());
        assert!(parse_client_reply("plain text").is_err());
    }

    fn ctx_run(script: MockScript) -> (Arc<MockProvider>, Result<ClientReply, SimulatorError>) {
        let p = ClientProfile::daniel();
        let provider = Arc::new(MockProvider::new(script));
        let gateway = Gateway::new(provider.clone());
        let history = [Utterance::client(0, p.opening_message.clone())];
        let ctx = ReplyContext {
            profile: &p.profile,
            dynamic: &p.initial_dynamic,
            stage: MiStage::PreContemplation,
            history: &history,
            worker_message: "Hi Daniel.",
            skills: &[Skill::NoSkills],
        };
        let result = generate_reply(&ctx, &gateway, DEFAULT_TEMPERATURE);
        (provider, result)
    }

    #[test]
    fn repair_then_accept() {
        let (provider, result) = ctx_run(MockScript::sequence([r#"{"message": "hi"}"#, GOOD]));
        assert_eq!(result.unwrap().message, "Whatever.");
        let requests = provider.requests();
        assert_eq!(requests[1].purpose, REPAIR_PURPOSE);
        assert!(requests[1].messages.last().unwrap().content.contains("missing fields"));
        assert!(requests[0].structured_output);
        assert_eq!(requests[0].messages.len(), 3);
    }

    #[test]
    fn double_failure_fails_turn() {
        let (_, result) = ctx_run(MockScript::sequence(["nope", "still nope"]));
        assert!(matches!(result, Err(SimulatorError::TurnFailed(_))));
    }
}
