//! Motivational Interviewing stages, per-stage instructions and skill weights.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::skill::{Skill, StageTag, Taxonomy};
use super::DomainError;

const STAGE_INFO_JSON: &str = include_str!("../../data/stage_info.json");

/// The MI stages a simulated client moves through.
///
/// Only the first three stages of change are modelled. Action and Maintenance
/// would weight skills like Preparation does, but they cannot be entered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiStage {
    PreContemplation,
    Contemplation,
    Preparation,
}

impl MiStage {
    pub const ALL: [MiStage; 3] = [
        MiStage::PreContemplation,
        MiStage::Contemplation,
        MiStage::Preparation,
    ];

    /// The following stage, or `None` at the terminal stage.
    pub fn next(self) -> Option<MiStage> {
        match self {
            MiStage::PreContemplation => Some(MiStage::Contemplation),
            MiStage::Contemplation => Some(MiStage::Preparation),
            MiStage::Preparation => None,
        }
    }

    pub fn is_terminal(self) -> bool {
        self.next().is_none()
    }

    pub fn name(self) -> &'static str {
        match self {
            MiStage::PreContemplation => "Pre-Contemplation",
            MiStage::Contemplation => "Contemplation",
            MiStage::Preparation => "Preparation",
        }
    }
}

impl fmt::Display for MiStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Stage-specific behavioural instructions for the client simulator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageInfo {
    pub stage: MiStage,
    pub role: String,
    pub core_stance: String,
    pub communication_style: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageInfoSet {
    pub version: u32,
    stages: Vec<StageInfo>,
}

impl StageInfoSet {
    pub fn builtin() -> &'static StageInfoSet {
        static BUILTIN: OnceLock<StageInfoSet> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            StageInfoSet::from_json(STAGE_INFO_JSON).expect("bundled stage_info.json is valid")
        })
    }

    pub fn from_json(json: &str) -> Result<Self, DomainError> {
        let set: StageInfoSet =
            serde_json::from_str(json).map_err(|e| DomainError::InvalidData(e.to_string()))?;
        for stage in MiStage::ALL {
            let info = set
                .stages
                .iter()
                .find(|s| s.stage == stage)
                .ok_or_else(|| DomainError::InvalidData(format!("no stage info for {stage}")))?;
            if [&info.role, &info.core_stance, &info.communication_style]
                .iter()
                .any(|t| t.trim().is_empty())
            {
                return Err(DomainError::InvalidData(format!("empty stage info for {stage}")));
            }
        }
        Ok(set)
    }

    pub fn get(&self, stage: MiStage) -> &StageInfo {
        self.stages
            .iter()
            .find(|s| s.stage == stage)
            .expect("validated on load")
    }
}

/// Skill weights per stage, derived from the taxonomy's Early/Late tags.
///
/// Pre-Contemplation and Contemplation weight Early skills 2 and Late skills
/// 1; Preparation (and the unmodelled Action/Maintenance stages) flip that.
/// `No-Skills` is always 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageWeightTable {
    weights: [[u8; 3]; 21],
}

impl StageWeightTable {
    pub fn from_taxonomy(taxonomy: &Taxonomy) -> Self {
        let mut weights = [[0u8; 3]; 21];
        for (skill, label) in taxonomy.labels() {
            for (s, stage) in MiStage::ALL.iter().enumerate() {
                weights[skill.index()][s] = match (label.stage_tag, stage) {
                    (StageTag::None, _) => 0,
                    (StageTag::Early, MiStage::Preparation) => 1,
                    (StageTag::Late, MiStage::Preparation) => 2,
                    (StageTag::Early, _) => 2,
                    (StageTag::Late, _) => 1,
                };
            }
        }
        Self { weights }
    }

    pub fn builtin() -> &'static StageWeightTable {
        static BUILTIN: OnceLock<StageWeightTable> = OnceLock::new();
        BUILTIN.get_or_init(|| StageWeightTable::from_taxonomy(Taxonomy::builtin()))
    }

    pub fn weight_for(&self, skill: Skill, stage: MiStage) -> u8 {
        let s = MiStage::ALL.iter().position(|x| *x == stage).expect("known stage");
        self.weights[skill.index()][s]
    }
}

/// Weight of `skill` in `stage` under the bundled taxonomy.
pub fn weight_for(skill: Skill, stage: MiStage) -> u8 {
    StageWeightTable::builtin().weight_for(skill, stage)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_examples() {
        assert_eq!(weight_for(Skill::Empathy, MiStage::PreContemplation), 2);
        assert_eq!(weight_for(Skill::GoalSetting, MiStage::Preparation), 2);
        assert_eq!(weight_for(Skill::NoSkills, MiStage::Contemplation), 0);
        assert_eq!(weight_for(Skill::GoalSetting, MiStage::Contemplation), 1);
        assert_eq!(weight_for(Skill::Empathy, MiStage::Preparation), 1);
    }

    #[test]
    fn ten_skills_per_weight_class() {
        for stage in MiStage::ALL {
            let twos = Skill::ALL.iter().filter(|s| weight_for(**s, stage) == 2).count();
            let ones = Skill::ALL.iter().filter(|s| weight_for(**s, stage) == 1).count();
            assert_eq!((twos, ones), (10, 10), "{stage}");
        }
        for skill in Skill::COUNSELING {
            assert_eq!(
                weight_for(skill, MiStage::PreContemplation) + weight_for(skill, MiStage::Preparation),
                3
            );
        }
    }

    #[test]
    fn stage_order_and_terminal() {
        assert!(MiStage::PreContemplation < MiStage::Contemplation);
        assert_eq!(MiStage::Contemplation.next(), Some(MiStage::Preparation));
        assert!(MiStage::Preparation.is_terminal());
    }

    #[test]
    fn builtin_stage_info_is_complete() {
        let set = StageInfoSet::builtin();
        assert!(set.get(MiStage::PreContemplation).role.contains("denial"));
        assert!(set.get(MiStage::Contemplation).core_stance.contains("ambivalent"));
        assert!(!set.get(MiStage::Preparation).communication_style.is_empty());
    }
}
