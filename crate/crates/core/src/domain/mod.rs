//! Shared vocabulary: skills, MI stages, stage weights, cost/benefit ledgers
//! and utterances.

mod cost_benefit;
mod skill;
mod stage;
mod utterance;

pub use cost_benefit::{CostBenefitTable, LedgerSide};
pub use skill::{parse_skill_label, Skill, SkillLabel, StageTag, Taxonomy};
pub(crate) use skill::normalize_label;
pub use stage::{weight_for, MiStage, StageInfo, StageInfoSet, StageWeightTable};
pub use utterance::{validate_conversation, Speaker, Utterance};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("unknown skill label {0:?}")]
    UnknownSkill(String),
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error("invalid data file: {0}")]
    InvalidData(String),
    #[error("invalid conversation: {0}")]
    InvalidConversation(String),
}
