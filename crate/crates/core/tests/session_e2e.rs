use std::path::PathBuf;

use switch_core::config::Config;
use switch_core::mi::ProgressionDecision;
use switch_core::session::{events_from_jsonl, events_to_jsonl, Event, SessionScript, SessionState};
use switch_core::simulator::ProfileRegistry;
use switch_core::MiStage;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run() -> switch_core::session::ScriptRun {
    let script = SessionScript::load(fixture("e2e_script.json")).unwrap();
    script.run(Config::default(), ProfileRegistry::builtin()).unwrap()
}

#[test]
fn twelve_turns_reach_preparation() {
    let run = run();
    assert_eq!(run.results.len(), 12);
    assert_eq!(run.state.stage(), MiStage::Preparation);
    let advanced: Vec<(u32, MiStage)> = run
        .results
        .iter()
        .filter_map(|r| r.progression.advanced_to().map(|s| (r.turn, s)))
        .collect();
    assert_eq!(advanced, vec![(4, MiStage::Contemplation), (8, MiStage::Preparation)]);
    for r in &run.results[8..] {
        assert_eq!(r.progression, ProgressionDecision::Terminal { stage: MiStage::Preparation });
    }
}

#[test]
fn event_log_matches_golden_file() {
    let run = run();
    let actual = events_to_jsonl(&run.events);
    let path = fixture("e2e_events.jsonl");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &actual).unwrap();
    }
    let golden = std::fs::read_to_string(&path).expect("golden file missing; run with UPDATE_GOLDEN=1");
    assert_eq!(actual, golden);
}

#[test]
fn golden_log_replays_to_final_state() {
    let run = run();
    let golden = events_from_jsonl(&std::fs::read_to_string(fixture("e2e_events.jsonl")).unwrap()).unwrap();
    let replayed = SessionState::replay(&golden).unwrap();
    assert_eq!(replayed, run.state);
    assert_eq!(replayed.state_hash(), run.state.state_hash());
}

#[test]
fn pipeline_order_holds_every_turn() {
    let run = run();
    let mut per_turn: Vec<Vec<&str>> = vec![Vec::new(); 13];
    for record in &run.events[1..] {
        let turn = match &record.event {
            Event::TraineeMessage { turn, .. }
            | Event::SkillsClassified { turn, .. }
            | Event::ScoreUpdated { turn, .. }
            | Event::ClientReplied { turn, .. }
            | Event::LedgerUpdated { turn, .. }
            | Event::ProgressionEvaluated { turn, .. } => *turn as usize,
            Event::SessionCreated { .. } => unreachable!(),
        };
        per_turn[turn].push(record.event.name());
    }
    let base = ["trainee_message", "skills_classified", "score_updated", "client_replied"];
    for (turn, names) in per_turn.iter().enumerate().skip(1) {
        let mut expected = base.to_vec();
        if turn >= 5 {
            expected.push("ledger_updated");
        }
        expected.push("progression_evaluated");
        assert_eq!(names, &expected, "turn {turn}");
    }
}

#[test]
fn gate_repair_and_ledger_warning_are_recorded() {
    let run = run();
    let turn6 = &run.results[5].progression;
    let ProgressionDecision::GateRejected { verdict, .. } = turn6 else { panic!("{turn6:?}") };
    assert!(!verdict.approved);
    let warnings: Vec<u32> = run
        .events
        .iter()
        .filter_map(|r| match &r.event {
            Event::LedgerUpdated { turn, warnings, .. } if !warnings.is_empty() => Some(*turn),
            _ => None,
        })
        .collect();
    assert_eq!(warnings, vec![7]);
    // 12 classify + 12 reply + 8 ledger + 5 gate + 1 repair
    assert_eq!(run.provider_calls, 38);
}
