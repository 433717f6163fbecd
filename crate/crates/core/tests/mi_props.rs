use std::sync::Arc;

use proptest::prelude::*;
use switch_core::gateway::{ErrorKind, Gateway, Matcher, MockProvider, MockReply, MockRule, MockScript, RetryPolicy};
use switch_core::mi::{
    maybe_progress, parse_verdict, skill_score, skill_score_with_base, MiConfig, MiState, ProgressionDecision, SkillCounts,
    VerdictStatus,
};
use switch_core::{CostBenefitTable, MiStage, Skill, StageWeightTable, Utterance};

/// Stage column of the skill weight table, by display name.
const STAGE_COLUMN: &[(&str, &str)] = &[
    ("Active Listening", "Early"),
    ("Empathy", "Early"),
    ("Advanced Empathy", "Late"),
    ("Reflecting", "Early"),
    ("Paraphrasing", "Early"),
    ("Summarizing", "Early"),
    ("Reframing", "Late"),
    ("Open-Ended Questions", "Early"),
    ("Closed-Ended Questions", "Late"),
    ("Clarifying", "Early"),
    ("Encouraging", "Early"),
    ("Validating", "Early"),
    ("Confronting", "Late"),
    ("Providing Feedback", "Late"),
    ("Normalizing", "Early"),
    ("Goal Setting", "Late"),
    ("Self-Disclosure", "Late"),
    ("Immediacy", "Late"),
    ("Focusing", "Late"),
    ("Exploring Options", "Late"),
];

fn weights() -> &'static StageWeightTable {
    StageWeightTable::builtin()
}

fn counts() -> impl Strategy<Value = SkillCounts> {
    prop::collection::vec(0u32..40, 21).prop_map(|v| Skill::ALL.iter().copied().zip(v).collect())
}

fn stage() -> impl Strategy<Value = MiStage> {
    prop::sample::select(MiStage::ALL.to_vec())
}

fn gateway(script: MockScript) -> (Gateway, Arc<MockProvider>) {
    let provider = Arc::new(MockProvider::new(script));
    (Gateway::new(provider.clone()).with_retry(RetryPolicy::immediate(1)), provider)
}

fn gate(reply: &str) -> MockScript {
    MockScript::default().rule(MockRule::purpose("gate", [reply]).sticky()).strict()
}

fn transcript() -> Vec<Utterance> {
    vec![Utterance::client(0, "I'm fine."), Utterance::worker(1, "Tell me more.")]
}

#[test]
fn weight_table_follows_early_late_rule() {
    assert_eq!(STAGE_COLUMN.len(), 20);
    for &(name, tag) in STAGE_COLUMN {
        let skill = switch_core::parse_skill_label(name).unwrap();
        let (early_w, late_w) = if tag == "Early" { (2, 1) } else { (1, 2) };
        assert_eq!(weights().weight_for(skill, MiStage::PreContemplation), early_w, "{name}");
        assert_eq!(weights().weight_for(skill, MiStage::Contemplation), early_w, "{name}");
        assert_eq!(weights().weight_for(skill, MiStage::Preparation), late_w, "{name}");
    }
    for stage in MiStage::ALL {
        assert_eq!(weights().weight_for(Skill::NoSkills, stage), 0);
    }
}

#[test]
fn worked_score() {
    let mut c = SkillCounts::new();
    c.set(Skill::Empathy, 2);
    c.set(Skill::Reframing, 1);
    let s = skill_score(&c, MiStage::PreContemplation, weights());
    assert!((s - (2.0 * 3f64.ln() + 2f64.ln())).abs() < 1e-12);
    assert!((s - 2.8904).abs() < 1e-4);
    assert_eq!(skill_score(&SkillCounts::new(), MiStage::Contemplation, weights()), 0.0);
}

#[test]
fn default_thresholds() {
    let c = MiConfig::default();
    assert_eq!(c.threshold_for(MiStage::Contemplation).unwrap(), 0.4);
    assert_eq!(c.threshold_for(MiStage::Preparation).unwrap(), 0.6);
    assert!(c.threshold_for(MiStage::PreContemplation).is_err());
    assert!(c.next_threshold(MiStage::Preparation).is_err());
}

proptest! {
    #[test]
    fn no_skills_never_counts(c in counts(), st in stage(), extra in 0u32..1000) {
        let mut more = c;
        more.set(Skill::NoSkills, c.get(Skill::NoSkills) + extra);
        prop_assert_eq!(skill_score(&c, st, weights()), skill_score(&more, st, weights()));
    }

    #[test]
    fn score_is_monotone_and_concave(c in counts(), st in stage(), j in 1usize..21) {
        let skill = Skill::ALL[j];
        let at = |n: u32| { let mut x = c; x.set(skill, n); skill_score(&x, st, weights()) };
        let n = c.get(skill);
        let (s0, s1, s2) = (at(n), at(n + 1), at(n + 2));
        prop_assert!(s1 > s0);
        prop_assert!(s2 - s1 <= s1 - s0 + 1e-12);
    }

    #[test]
    fn score_is_nonnegative_and_matches_definition(c in counts(), st in stage()) {
        let direct: f64 = Skill::ALL.iter()
            .map(|&s| f64::from(weights().weight_for(s, st)) * (1.0 + f64::from(c.get(s))).ln())
            .sum();
        let s = skill_score(&c, st, weights());
        prop_assert!(s >= 0.0);
        prop_assert!((s - direct).abs() < 1e-9);
    }

    #[test]
    fn log_base_rescales(c in counts(), st in stage(), base in 1.5f64..20.0) {
        let natural = skill_score(&c, st, weights());
        let rebased = skill_score_with_base(&c, st, weights(), Some(base));
        prop_assert!((rebased * base.ln() - natural).abs() < 1e-9);
    }

    /// The gate runs only at or above the threshold, and the stage changes
    /// exactly when it also approves.
    #[test]
    fn progression_rule(
        n in prop::collection::vec(0u32..3, 21),
        from in prop::sample::select(vec![MiStage::PreContemplation, MiStage::Contemplation]),
        base in 2.0f64..30.0,
        approve: bool,
    ) {
        let config = MiConfig { log_base: Some(base), ..MiConfig::default() };
        let mut state = MiState::at(from);
        state.counts = Skill::ALL.iter().copied().zip(n).collect();
        state.score = config.score(&state.counts, from);
        let before = state.clone();
        let threshold = config.next_threshold(from).unwrap().1;
        let (gw, provider) = gateway(gate(if approve { "ok\nFINAL: YES" } else { "no\nFINAL: NO" }));
        let decision = maybe_progress(&mut state, &transcript(), &config, &gw);

        let above = before.score >= threshold;
        prop_assert_eq!(provider.calls_for("gate"), usize::from(above));
        match decision {
            ProgressionDecision::BelowThreshold { .. } => {
                prop_assert!(!above);
                prop_assert_eq!(&state, &before);
            }
            ProgressionDecision::GateRejected { .. } => {
                prop_assert!(above && !approve);
                prop_assert_eq!(&state, &before);
            }
            ProgressionDecision::Advanced { from: f, to, score, .. } => {
                prop_assert!(above && approve);
                prop_assert_eq!(f, from);
                prop_assert_eq!(Some(to), from.next());
                prop_assert_eq!(score, before.score);
                prop_assert_eq!(state.stage, to);
                prop_assert!(state.counts.is_zero());
                prop_assert_eq!(state.score, 0.0);
                prop_assert_eq!(&state.table, &CostBenefitTable::default_for(to));
            }
            ProgressionDecision::Terminal { .. } => prop_assert!(false, "not terminal"),
        }
    }

    #[test]
    fn preparation_is_absorbing(n in prop::collection::vec(0u32..50, 21)) {
        let mut state = MiState::at(MiStage::Preparation);
        state.counts = Skill::ALL.iter().copied().zip(n).collect();
        state.score = MiConfig::default().score(&state.counts, MiStage::Preparation);
        let before = state.clone();
        let (gw, provider) = gateway(gate("FINAL: YES"));
        let decision = maybe_progress(&mut state, &transcript(), &MiConfig::default(), &gw);
        prop_assert_eq!(decision, ProgressionDecision::Terminal { stage: MiStage::Preparation });
        prop_assert_eq!(state, before);
        prop_assert_eq!(provider.calls(), 0);
    }

    #[test]
    fn verdict_parser_reads_last_marker(reason in "[a-z ]{0,40}", first: bool, last: bool) {
        let yn = |b: bool| if b { "yes" } else { "No" };
        let text = format!("{reason}\nfinal: {}\nmore thought\nFINAL:   {}.", yn(first), yn(last));
        prop_assert_eq!(parse_verdict(&text), Some(last));
    }
}

fn above_threshold_state() -> MiState {
    let mut state = MiState::new();
    state.record_skills(&[Skill::Empathy], &MiConfig::default());
    state
}

#[test]
fn unparseable_verdict_is_reasked_once_then_rejected() {
    let script = MockScript::default()
        .rule(MockRule::purpose("gate", ["I think so."]))
        .rule(MockRule::purpose("gate-repair", ["Still thinking."]))
        .strict();
    let (gw, provider) = gateway(script);
    let mut state = above_threshold_state();
    let decision = maybe_progress(&mut state, &transcript(), &MiConfig::default(), &gw);
    let ProgressionDecision::GateRejected { verdict, .. } = decision else { panic!("{decision:?}") };
    assert_eq!(verdict.status, VerdictStatus::Unparseable);
    assert_eq!((provider.calls_for("gate"), provider.calls_for("gate-repair")), (1, 1));
    assert_eq!(state.stage, MiStage::PreContemplation);
}

#[test]
fn repaired_verdict_can_approve() {
    let script = MockScript::default()
        .rule(MockRule::purpose("gate", ["Looks good."]))
        .rule(MockRule::purpose("gate-repair", ["FINAL: YES"]))
        .strict();
    let (gw, _) = gateway(script);
    let mut state = above_threshold_state();
    let decision = maybe_progress(&mut state, &transcript(), &MiConfig::default(), &gw);
    assert_eq!(decision.advanced_to(), Some(MiStage::Contemplation));
    assert_eq!(decision.verdict().unwrap().status, VerdictStatus::Parsed);
}

#[test]
fn gateway_failure_is_a_rejection() {
    let script = MockScript::default()
        .rule(MockRule::new(Matcher::Purpose("gate".into()), vec![MockReply::fail(ErrorKind::Server)]))
        .strict();
    let (gw, _) = gateway(script);
    let mut state = above_threshold_state();
    let before = state.clone();
    let decision = maybe_progress(&mut state, &transcript(), &MiConfig::default(), &gw);
    let ProgressionDecision::GateRejected { verdict, .. } = decision else { panic!("{decision:?}") };
    assert_eq!(verdict.status, VerdictStatus::GatewayError);
    assert!(!verdict.approved);
    assert_eq!(state, before);
}
