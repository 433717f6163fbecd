//! Social-work training engine: simulated counseling clients, counseling
//! skill classification, Motivational Interviewing stage control and an
//! offline evaluation harness.

pub mod classifier;
pub mod config;
pub mod corpus;
pub mod domain;
pub mod gateway;
pub mod metrics;
pub mod mi;
pub mod retrieval;
pub mod session;
pub mod simulator;
pub mod template;
pub mod thresholds;

pub use domain::{
    parse_skill_label, weight_for, CostBenefitTable, DomainError, LedgerSide, MiStage, Skill, SkillLabel, Speaker,
    StageInfo, StageInfoSet, StageTag, StageWeightTable, Taxonomy, Utterance,
};
