//! Counseling-skill taxonomy: the 20 skills plus the `No-Skills` label.
//!
//! The skill set itself is fixed by the [`Skill`] enum. Definitions, examples
//! and Early/Late stage tags live in `data/taxonomy.json` and are loaded into a
//! [`Taxonomy`], which is validated against the enum on load.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::DomainError;

const TAXONOMY_JSON: &str = include_str!("../../data/taxonomy.json");

/// A classification label: one of the 20 counseling skills or `No-Skills`.
///
/// Declaration order is the canonical taxonomy order. `No-Skills` comes first,
/// the 20 skills follow in the order of the published skill table, which is
/// also the column order of confidence-score files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Skill {
    NoSkills,
    ActiveListening,
    Empathy,
    AdvancedEmpathy,
    Reflecting,
    Paraphrasing,
    Summarizing,
    Reframing,
    OpenEndedQuestions,
    ClosedEndedQuestions,
    Clarifying,
    Encouraging,
    Validating,
    Confronting,
    ProvidingFeedback,
    Normalizing,
    GoalSetting,
    SelfDisclosure,
    Immediacy,
    Focusing,
    ExploringOptions,
}

impl Skill {
    /// Every label, `No-Skills` first.
    pub const ALL: [Skill; 21] = [
        Skill::NoSkills,
        Skill::ActiveListening,
        Skill::Empathy,
        Skill::AdvancedEmpathy,
        Skill::Reflecting,
        Skill::Paraphrasing,
        Skill::Summarizing,
        Skill::Reframing,
        Skill::OpenEndedQuestions,
        Skill::ClosedEndedQuestions,
        Skill::Clarifying,
        Skill::Encouraging,
        Skill::Validating,
        Skill::Confronting,
        Skill::ProvidingFeedback,
        Skill::Normalizing,
        Skill::GoalSetting,
        Skill::SelfDisclosure,
        Skill::Immediacy,
        Skill::Focusing,
        Skill::ExploringOptions,
    ];

    /// The 20 counseling skills in column order (no `No-Skills`).
    pub const COUNSELING: [Skill; 20] = [
        Skill::ActiveListening,
        Skill::Empathy,
        Skill::AdvancedEmpathy,
        Skill::Reflecting,
        Skill::Paraphrasing,
        Skill::Summarizing,
        Skill::Reframing,
        Skill::OpenEndedQuestions,
        Skill::ClosedEndedQuestions,
        Skill::Clarifying,
        Skill::Encouraging,
        Skill::Validating,
        Skill::Confronting,
        Skill::ProvidingFeedback,
        Skill::Normalizing,
        Skill::GoalSetting,
        Skill::SelfDisclosure,
        Skill::Immediacy,
        Skill::Focusing,
        Skill::ExploringOptions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Skill::NoSkills => "No-Skills",
            Skill::ActiveListening => "Active Listening",
            Skill::Empathy => "Empathy",
            Skill::AdvancedEmpathy => "Advanced Empathy",
            Skill::Reflecting => "Reflecting",
            Skill::Paraphrasing => "Paraphrasing",
            Skill::Summarizing => "Summarizing",
            Skill::Reframing => "Reframing",
            Skill::OpenEndedQuestions => "Open-Ended Questions",
            Skill::ClosedEndedQuestions => "Closed-Ended Questions",
            Skill::Clarifying => "Clarifying",
            Skill::Encouraging => "Encouraging",
            Skill::Validating => "Validating",
            Skill::Confronting => "Confronting",
            Skill::ProvidingFeedback => "Providing Feedback",
            Skill::Normalizing => "Normalizing",
            Skill::GoalSetting => "Goal Setting",
            Skill::SelfDisclosure => "Self-Disclosure",
            Skill::Immediacy => "Immediacy",
            Skill::Focusing => "Focusing",
            Skill::ExploringOptions => "Exploring Options",
        }
    }

    /// Stable snake_case identifier used in data files.
    pub fn id(self) -> &'static str {
        match self {
            Skill::NoSkills => "no_skills",
            Skill::ActiveListening => "active_listening",
            Skill::Empathy => "empathy",
            Skill::AdvancedEmpathy => "advanced_empathy",
            Skill::Reflecting => "reflecting",
            Skill::Paraphrasing => "paraphrasing",
            Skill::Summarizing => "summarizing",
            Skill::Reframing => "reframing",
            Skill::OpenEndedQuestions => "open_ended_questions",
            Skill::ClosedEndedQuestions => "closed_ended_questions",
            Skill::Clarifying => "clarifying",
            Skill::Encouraging => "encouraging",
            Skill::Validating => "validating",
            Skill::Confronting => "confronting",
            Skill::ProvidingFeedback => "providing_feedback",
            Skill::Normalizing => "normalizing",
            Skill::GoalSetting => "goal_setting",
            Skill::SelfDisclosure => "self_disclosure",
            Skill::Immediacy => "immediacy",
            Skill::Focusing => "focusing",
            Skill::ExploringOptions => "exploring_options",
        }
    }

    /// Position in [`Skill::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Position in [`Skill::COUNSELING`]; `None` for `No-Skills`.
    pub fn column(self) -> Option<usize> {
        (self as usize).checked_sub(1)
    }

    pub fn from_column(column: usize) -> Option<Skill> {
        Skill::COUNSELING.get(column).copied()
    }

    pub fn is_no_skills(self) -> bool {
        self == Skill::NoSkills
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Skill {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_skill_label(s)
    }
}

impl Serialize for Skill {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Skill {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        parse_skill_label(&raw).map_err(serde::de::Error::custom)
    }
}

/// Lowercase, fold hyphens/underscores to spaces, collapse whitespace.
pub(crate) fn normalize_label(raw: &str) -> String {
    let folded: String = raw
        .chars()
        .map(|c| match c {
            '-' | '_' | '\u{2010}' | '\u{2011}' | '\u{2013}' => ' ',
            c => c,
        })
        .flat_map(char::to_lowercase)
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Resolve free text (data files, LLM output) to a taxonomy label.
pub fn parse_skill_label(raw: &str) -> Result<Skill, DomainError> {
    let key = normalize_label(raw);
    if key.is_empty() {
        return Err(DomainError::UnknownSkill(raw.to_string()));
    }
    if key == "no skill" {
        return Ok(Skill::NoSkills);
    }
    Skill::ALL
        .iter()
        .copied()
        .find(|s| normalize_label(s.name()) == key || normalize_label(s.id()) == key)
        .ok_or_else(|| DomainError::UnknownSkill(raw.to_string()))
}

/// Typical counseling-session phase a skill belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageTag {
    Early,
    Late,
    None,
}

/// One taxonomy entry as stored in the data file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillLabel {
    pub id: String,
    pub display_name: String,
    pub stage_tag: StageTag,
    pub definition: String,
    pub examples: Vec<String>,
}

/// The validated taxonomy. Entries are stored in [`Skill::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub version: u32,
    skills: Vec<SkillLabel>,
}

impl Taxonomy {
    /// The taxonomy bundled with the crate.
    pub fn builtin() -> &'static Taxonomy {
        static BUILTIN: OnceLock<Taxonomy> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            Taxonomy::from_json(TAXONOMY_JSON).expect("bundled taxonomy.json is valid")
        })
    }

    pub fn from_json(json: &str) -> Result<Self, DomainError> {
        let taxonomy: Taxonomy =
            serde_json::from_str(json).map_err(|e| DomainError::InvalidData(e.to_string()))?;
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    /// Pretty JSON in the same layout as the bundled data file.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("taxonomy serializes");
        out.push('\n');
        out
    }

    fn validate(&self) -> Result<(), DomainError> {
        let invalid = |msg: String| Err(DomainError::InvalidTaxonomy(msg));
        if self.skills.len() != Skill::ALL.len() {
            return invalid(format!(
                "expected {} labels, found {}",
                Skill::ALL.len(),
                self.skills.len()
            ));
        }
        for (entry, skill) in self.skills.iter().zip(Skill::ALL) {
            if entry.id != skill.id() || entry.display_name != skill.name() {
                return invalid(format!(
                    "entry {:?} out of place; expected {:?}",
                    entry.id,
                    skill.id()
                ));
            }
            if entry.definition.trim().is_empty() {
                return invalid(format!("{} has an empty definition", skill.id()));
            }
            let tag_ok = match skill {
                Skill::NoSkills => entry.stage_tag == StageTag::None,
                _ => entry.stage_tag != StageTag::None,
            };
            if !tag_ok {
                return invalid(format!("{} has stage tag {:?}", skill.id(), entry.stage_tag));
            }
        }
        let early = self.skills.iter().filter(|s| s.stage_tag == StageTag::Early).count();
        let late = self.skills.iter().filter(|s| s.stage_tag == StageTag::Late).count();
        if early != 10 || late != 10 {
            return invalid(format!("expected 10 early and 10 late skills, found {early}/{late}"));
        }
        Ok(())
    }

    pub fn label(&self, skill: Skill) -> &SkillLabel {
        &self.skills[skill.index()]
    }

    pub fn stage_tag(&self, skill: Skill) -> StageTag {
        self.label(skill).stage_tag
    }

    pub fn labels(&self) -> impl Iterator<Item = (Skill, &SkillLabel)> {
        Skill::ALL.iter().copied().zip(self.skills.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_exact_and_normalized_names() {
        assert_eq!(parse_skill_label("Empathy").unwrap(), Skill::Empathy);
        assert_eq!(
            parse_skill_label("open-ended questions").unwrap(),
            Skill::OpenEndedQuestions
        );
        assert_eq!(parse_skill_label("  Open Ended   QUESTIONS ").unwrap(), Skill::OpenEndedQuestions);
        assert_eq!(parse_skill_label("self_disclosure").unwrap(), Skill::SelfDisclosure);
        assert_eq!(parse_skill_label("No Skills").unwrap(), Skill::NoSkills);
        assert_eq!(parse_skill_label("Self-disclosure").unwrap(), Skill::SelfDisclosure);
    }

    #[test]
    fn unknown_label_is_rejected() {
        assert!(matches!(
            parse_skill_label("Mindfulness"),
            Err(DomainError::UnknownSkill(s)) if s == "Mindfulness"
        ));
        assert!(parse_skill_label("   ").is_err());
    }

    #[test]
    fn parse_is_idempotent_on_canonical_names() {
        for skill in Skill::ALL {
            let once = parse_skill_label(skill.name()).unwrap();
            assert_eq!(once, skill);
            assert_eq!(parse_skill_label(once.name()).unwrap(), once);
        }
    }

    #[test]
    fn columns_follow_counseling_order() {
        for (i, skill) in Skill::COUNSELING.iter().enumerate() {
            assert_eq!(skill.column(), Some(i));
            assert_eq!(Skill::from_column(i), Some(*skill));
        }
        assert_eq!(Skill::NoSkills.column(), None);
    }

    #[test]
    fn builtin_taxonomy_round_trips_byte_identically() {
        let taxonomy = Taxonomy::builtin();
        assert_eq!(taxonomy.to_json(), TAXONOMY_JSON);
    }

    #[test]
    fn rejects_taxonomy_with_wrong_stage_balance() {
        let mut value: serde_json::Value = serde_json::from_str(TAXONOMY_JSON).unwrap();
        value["skills"][1]["stage_tag"] = "late".into();
        let err = Taxonomy::from_json(&value.to_string()).unwrap_err();
        assert!(matches!(err, DomainError::InvalidTaxonomy(_)));
    }

    #[test]
    fn stage_tags_match_skill_table() {
        let t = Taxonomy::builtin();
        let early = [
            Skill::ActiveListening,
            Skill::Empathy,
            Skill::Reflecting,
            Skill::Paraphrasing,
            Skill::Summarizing,
            Skill::OpenEndedQuestions,
            Skill::Clarifying,
            Skill::Encouraging,
            Skill::Validating,
            Skill::Normalizing,
        ];
        for skill in Skill::COUNSELING {
            let expected = if early.contains(&skill) { StageTag::Early } else { StageTag::Late };
            assert_eq!(t.stage_tag(skill), expected, "{skill}");
        }
        assert_eq!(t.stage_tag(Skill::NoSkills), StageTag::None);
    }
}
