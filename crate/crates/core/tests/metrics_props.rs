mod common;

use std::collections::BTreeSet;

use common::{oracle_metrics, N_LABELS};
use proptest::prelude::*;
use switch_core::metrics::{
    accuracy_any_overlap, focal_loss, macro_metrics, micro_metrics, per_skill_f1, read_predictions, write_predictions,
    FocalParams, MetricsReport, PredictionRecord,
};
use switch_core::Skill;

fn label_set() -> impl Strategy<Value = BTreeSet<Skill>> {
    prop::collection::btree_set(0..N_LABELS, 0..=N_LABELS).prop_map(|ix| ix.into_iter().map(|i| Skill::ALL[i]).collect())
}

fn records() -> impl Strategy<Value = Vec<PredictionRecord>> {
    prop::collection::vec((label_set(), label_set()), 1..=50).prop_map(|pairs| {
        pairs
            .into_iter()
            .enumerate()
            .map(|(i, (p, t))| PredictionRecord { key: i.to_string(), predicted: p, ground_truth: t })
            .collect()
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

proptest! {
    #[test]
    fn metrics_agree_with_oracle(recs in records()) {
        let o = oracle_metrics(&recs);
        prop_assert!(close(accuracy_any_overlap(&recs).unwrap(), o.accuracy));
        let (p, r, f) = macro_metrics(&recs).unwrap();
        prop_assert!(close(p, o.macro_prf.0) && close(r, o.macro_prf.1) && close(f, o.macro_prf.2));
        let (p, r, f) = micro_metrics(&recs).unwrap();
        prop_assert!(close(p, o.micro_prf.0) && close(r, o.micro_prf.1) && close(f, o.micro_prf.2));
        let per = per_skill_f1(&recs).unwrap();
        prop_assert_eq!(per.len(), N_LABELS);
        for (pos, skill) in Skill::ALL.iter().enumerate() {
            prop_assert!(close(per[skill], o.per_label_f1[pos]));
        }
    }

    #[test]
    fn metrics_stay_in_unit_interval(recs in records()) {
        let report = MetricsReport::compute(&recs).unwrap();
        for v in [report.accuracy, report.macro_p, report.macro_r, report.macro_f1,
                  report.micro_p, report.micro_r, report.micro_f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn perfect_predictions_score_one(truths in prop::collection::vec(label_set().prop_filter("non-empty", |s| !s.is_empty()), 1..30)) {
        let recs: Vec<PredictionRecord> = truths.iter().enumerate()
            .map(|(i, t)| PredictionRecord { key: i.to_string(), predicted: t.clone(), ground_truth: t.clone() })
            .collect();
        prop_assert_eq!(accuracy_any_overlap(&recs).unwrap(), 1.0);
        prop_assert_eq!(macro_metrics(&recs).unwrap().2, 1.0);
        prop_assert_eq!(micro_metrics(&recs).unwrap().2, 1.0);
    }

    #[test]
    fn order_of_records_is_irrelevant(recs in records()) {
        let mut reversed = recs.clone();
        reversed.reverse();
        prop_assert!(close(macro_metrics(&recs).unwrap().2, macro_metrics(&reversed).unwrap().2));
        prop_assert_eq!(micro_metrics(&recs).unwrap(), micro_metrics(&reversed).unwrap());
    }

    #[test]
    fn prediction_files_round_trip(recs in records()) {
        let recs: Vec<PredictionRecord> = recs.into_iter().filter(|r| !r.ground_truth.is_empty()).collect();
        let mut buf = Vec::new();
        write_predictions(&recs, &mut buf).unwrap();
        prop_assert_eq!(read_predictions(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn focal_loss_is_nonnegative_and_below_cross_entropy(p in 0.001f64..0.999, positive: bool) {
        let FocalParams { alpha, gamma } = FocalParams::default();
        let fl = focal_loss(p, positive, alpha, gamma).unwrap();
        let ce = focal_loss(p, positive, 1.0, 0.0).unwrap();
        prop_assert!(fl >= 0.0);
        prop_assert!(fl <= ce);
    }
}

#[test]
fn worked_two_record_example() {
    use Skill::{ActiveListening as A, Clarifying as D, Empathy as B, Reflecting as C};
    let recs = vec![PredictionRecord::new("1", [A, B], [A]), PredictionRecord::new("2", [C], [C, D])];
    let (p, r, f) = macro_metrics(&recs).unwrap();
    assert_eq!((p, r, f), (0.75, 0.75, 0.75));
    let (p, r, f) = micro_metrics(&recs).unwrap();
    assert_eq!(p, 2.0 / 3.0);
    assert_eq!(r, 2.0 / 3.0);
    assert!((f - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(accuracy_any_overlap(&recs).unwrap(), 1.0);
}

#[test]
fn focal_loss_reduces_to_cross_entropy() {
    for k in 1..100 {
        let p = k as f64 / 100.0;
        assert!((focal_loss(p, true, 1.0, 0.0).unwrap() + p.ln()).abs() < 1e-12);
        assert!((focal_loss(p, false, 1.0, 0.0).unwrap() + (1.0 - p).ln()).abs() < 1e-12);
    }
}

#[test]
fn focal_defaults_and_worked_value() {
    let d = FocalParams::default();
    assert_eq!((d.alpha, d.gamma), (0.25, 2.0));
    let v = focal_loss(0.9, true, d.alpha, d.gamma).unwrap();
    assert!((v - 0.25 * 0.01 * -(0.9f64).ln()).abs() < 1e-15);
    assert!((v - 0.00026341).abs() < 1e-8);
    assert!(focal_loss(0.0, true, 0.25, 2.0).is_err());
    assert!(focal_loss(1.0, true, 0.25, 2.0).is_err());
}
