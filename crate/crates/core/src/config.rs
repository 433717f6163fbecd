//! Engine configuration, read from a TOML file.
//!
//! Secrets are never part of the file: the LLM key comes from the variable
//! named by `llm.api_key_env` and the HTTP bearer token from
//! `SWITCH_API_TOKEN`. Unknown keys are rejected, so a stray `api_key` entry
//! fails loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::ProviderConfig;
use crate::mi::MiConfig;
use crate::retrieval::Bm25Params;
use crate::simulator::DEFAULT_TEMPERATURE;
use crate::thresholds::{GaParams, Objective};

pub const ENV_API_TOKEN: &str = "SWITCH_API_TOKEN";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    /// Parse failures carry the message and line only; toml's default
    /// rendering quotes the offending source line, which may hold a secret.
    #[error("invalid config (line {line}): {message}")]
    Parse { line: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub bm25: Bm25Params,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: 8, bm25: Bm25Params::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Utterances before the target shown to the classifier.
    pub history_window: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { history_window: crate::classifier::DEFAULT_HISTORY_WINDOW }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub temperature: f32,
    /// Extra profile files (`*.json`) added to the bundled ones.
    pub profiles_dir: Option<PathBuf>,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self { temperature: DEFAULT_TEMPERATURE, profiles_dir: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdScheme {
    #[default]
    Uuid,
    /// `s0001`, `s0002`, ... in creation order; reproducible runs.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Where event logs and snapshots live; in memory when absent.
    pub data_dir: Option<PathBuf>,
    /// Snapshot after this many committed turns (0 disables snapshots).
    pub snapshot_every: u32,
    /// Include stage and gate verdicts in the trainee's turn payload.
    pub expose_stage_to_trainee: bool,
    pub id_scheme: IdScheme,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { data_dir: None, snapshot_every: 10, expose_stage_to_trainee: false, id_scheme: IdScheme::Uuid }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub objective: Objective,
    pub ga: GaParams,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { objective: Objective::MicroF1, ga: GaParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub llm: ProviderConfig,
    /// Embedding cache directory; in memory when absent.
    pub embedding_cache_dir: Option<PathBuf>,
    pub mi: MiConfig,
    pub retrieval: RetrievalConfig,
    pub classifier: ClassifierConfig,
    pub simulator: SimulatorConfig,
    pub session: SessionConfig,
    pub thresholds: ThresholdConfig,
    pub server: ServerConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.span().map_or(0, |span| text[..span.start].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.retrieval.k == 0 {
            return invalid("retrieval.k must be at least 1".into());
        }
        if let Some(base) = self.mi.log_base {
            if !(base > 0.0 && base != 1.0 && base.is_finite()) {
                return invalid(format!("mi.log_base must be positive and not 1, got {base}"));
            }
        }
        for t in [self.mi.threshold_contemplation, self.mi.threshold_preparation] {
            if !(t.is_finite() && t >= 0.0) {
                return invalid(format!("stage thresholds must be non-negative, got {t}"));
            }
        }
        if self.llm.retry.max_attempts == 0 {
            return invalid("llm.retry.max_attempts must be at least 1".into());
        }
        self.thresholds.ga.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
