//! Brute-force reference implementations and data generators shared by the
//! property tests and the acceptance suite. Written from the metric
//! definitions directly, without calling into the code under test.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use switch_core::corpus::{ingest_reader, TranscriptCorpus};
use switch_core::metrics::PredictionRecord;
use switch_core::retrieval::Hit;
use switch_core::thresholds::ConfidenceMatrix;
use switch_core::Skill;

pub const N_LABELS: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleMetrics {
    pub accuracy: f64,
    pub macro_prf: (f64, f64, f64),
    pub micro_prf: (f64, f64, f64),
    pub per_label_f1: [f64; N_LABELS],
}

fn mask(set: &BTreeSet<Skill>) -> [bool; N_LABELS] {
    let mut m = [false; N_LABELS];
    for (pos, s) in Skill::ALL.iter().enumerate() {
        m[pos] = set.contains(s);
    }
    m
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p == 0.0 && r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Recomputes every metric from label masks with plain loops.
pub fn oracle_metrics(records: &[PredictionRecord]) -> OracleMetrics {
    let n = records.len() as f64;
    let masks: Vec<([bool; N_LABELS], [bool; N_LABELS])> =
        records.iter().map(|r| (mask(&r.predicted), mask(&r.ground_truth))).collect();

    let mut any = 0.0;
    let mut p_total = 0.0;
    let mut r_total = 0.0;
    let (mut inter, mut npred, mut ntrue) = (0.0, 0.0, 0.0);
    let mut tp = [0.0; N_LABELS];
    let mut fp = [0.0; N_LABELS];
    let mut fnn = [0.0; N_LABELS];
    for (pred, truth) in &masks {
        let mut i = 0.0;
        let mut pc = 0.0;
        let mut tc = 0.0;
        for l in 0..N_LABELS {
            if pred[l] && truth[l] {
                i += 1.0;
                tp[l] += 1.0;
            }
            if pred[l] && !truth[l] {
                fp[l] += 1.0;
            }
            if !pred[l] && truth[l] {
                fnn[l] += 1.0;
            }
            if pred[l] {
                pc += 1.0;
            }
            if truth[l] {
                tc += 1.0;
            }
        }
        if i > 0.0 {
            any += 1.0;
        }
        p_total += if pc > 0.0 { i / pc } else { 0.0 };
        r_total += if tc > 0.0 { i / tc } else { 0.0 };
        inter += i;
        npred += pc;
        ntrue += tc;
    }
    let macro_p = p_total / n;
    let macro_r = r_total / n;
    let micro_p = if npred > 0.0 { inter / npred } else { 0.0 };
    let micro_r = if ntrue > 0.0 { inter / ntrue } else { 0.0 };
    let mut per_label_f1 = [0.0; N_LABELS];
    for l in 0..N_LABELS {
        let d = 2.0 * tp[l] + fp[l] + fnn[l];
        per_label_f1[l] = if d > 0.0 { 2.0 * tp[l] / d } else { 0.0 };
    }
    OracleMetrics {
        accuracy: any / n,
        macro_prf: (macro_p, macro_r, f1_of(macro_p, macro_r)),
        micro_prf: (micro_p, micro_r, f1_of(micro_p, micro_r)),
        per_label_f1,
    }
}

pub fn random_label_set(rng: &mut impl Rng, max: usize) -> BTreeSet<Skill> {
    let size = rng.random_range(0..=max);
    let mut all = Skill::ALL.to_vec();
    all.shuffle(rng);
    all.into_iter().take(size).collect()
}

/// Up to 50 records over all 21 labels; sets may be empty.
pub fn random_records(rng: &mut impl Rng) -> Vec<PredictionRecord> {
    let n = rng.random_range(1..=50);
    (0..n)
        .map(|i| {
            let max = rng.random_range(1..=N_LABELS);
            PredictionRecord {
                key: format!("r#{i}"),
                predicted: random_label_set(rng, max),
                ground_truth: random_label_set(rng, max),
            }
        })
        .collect()
}

/// Lowercase alphanumeric runs, written independently of the library.
pub fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Okapi BM25 computed term by term from raw counts.
pub fn oracle_bm25(docs: &[String], query: &str, k1: f64, b: f64) -> Vec<f64> {
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| oracle_tokens(d)).collect();
    let n = docs.len() as f64;
    let avg = tokenized.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let q = oracle_tokens(query);
    tokenized
        .iter()
        .map(|doc| {
            let mut s = 0.0;
            for term in &q {
                let tf = doc.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = tokenized.iter().filter(|d| d.contains(term)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = if avg > 0.0 { doc.len() as f64 / avg } else { 0.0 };
                s += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * norm));
            }
            s
        })
        .collect()
}

pub fn oracle_cosine(vectors: &[Vec<f32>], query: &[f32]) -> Vec<f64> {
    let norm = |v: &[f32]| v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    let qn = norm(query);
    vectors
        .iter()
        .map(|v| {
            let dot: f64 = v.iter().zip(query).map(|(a, b)| *a as f64 * *b as f64).sum();
            let vn = norm(v);
            if qn == 0.0 || vn == 0.0 {
                0.0
            } else {
                dot / (qn * vn)
            }
        })
        .collect()
}

/// Indices sorted by score descending, ties by index.
pub fn brute_force_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx
}

/// Checks `actual` against exhaustive scoring: length `min(k, n)`, scores
/// within `tol` of the oracle, and each position holding the oracle's
/// document or one tied with it within `tol`.
pub fn check_ranking(actual: &[Hit], oracle: &[f64], k: usize, tol: f64) -> Result<(), String> {
    let expected = brute_force_order(oracle);
    let want = k.min(oracle.len());
    if actual.len() != want {
        return Err(format!("returned {} hits, expected {want}", actual.len()));
    }
    let mut seen = BTreeSet::new();
    for (pos, hit) in actual.iter().enumerate() {
        if !seen.insert(hit.ordinal) {
            return Err(format!("ordinal {} returned twice", hit.ordinal));
        }
        if (hit.score - oracle[hit.ordinal]).abs() > tol {
            return Err(format!("doc {} scored {} but oracle says {}", hit.ordinal, hit.score, oracle[hit.ordinal]));
        }
        let e = expected[pos];
        if hit.ordinal != e && (oracle[hit.ordinal] - oracle[e]).abs() > tol {
            return Err(format!("position {pos}: got doc {} expected doc {e}", hit.ordinal));
        }
    }
    Ok(())
}

const VOCAB: &[&str] = &[
    "feel", "stuck", "job", "money", "family", "help", "tell", "more", "worried", "change", "plan", "today", "week",
    "angry", "tired", "sleep", "friend", "school", "Truth", "LIE",
];

pub fn random_doc(rng: &mut impl Rng) -> String {
    let len = rng.random_range(0..12);
    let mut out = String::new();
    for i in 0..len {
        if i > 0 {
            out.push_str([" ", ", ", ". ", "? ", " - "][rng.random_range(0..5)]);
        }
        out.push_str(VOCAB[rng.random_range(0..VOCAB.len())]);
    }
    out
}

pub fn random_vector(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

/// Grid value `k / 100`, computed the same way as the optimizer's grid.
pub fn grid_value(k: u32) -> f64 {
    k as f64 / 100.0
}

/// A matrix over the 20 counseling labels that thresholds `planted`
/// separate perfectly. For every label one sample scores exactly at the
/// threshold (positive) and one sits half a grid step below it (negative),
/// so the smallest perfect grid value is the planted one.
pub fn planted_matrix(rng: &mut impl Rng, planted: &[f64], n: usize) -> ConfidenceMatrix {
    let m = planted.len();
    assert!(n >= 2 * m);
    let mut scores = vec![vec![0.0; m]; n];
    for (i, row) in scores.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let t = planted[j];
            *cell = if i == j {
                t
            } else if i == m + j {
                t - 0.005
            } else if rng.random_bool(0.3) {
                rng.random_range(t..=1.0)
            } else {
                rng.random_range(0.0..t - 0.005)
            };
        }
    }
    let rows = scores
        .into_iter()
        .map(|row| {
            let mut truth: BTreeSet<Skill> =
                (0..m).filter(|&j| row[j] >= planted[j]).map(|j| Skill::COUNSELING[j]).collect();
            if truth.is_empty() {
                truth.insert(Skill::NoSkills);
            }
            (row, truth)
        })
        .collect();
    ConfidenceMatrix::from_rows(rows).unwrap()
}

/// Noisy, non-separable matrix with at least one label per sample.
pub fn random_matrix(rng: &mut impl Rng, n: usize) -> ConfidenceMatrix {
    let rows = (0..n)
        .map(|_| {
            let mut truth = BTreeSet::new();
            let row: Vec<f64> = Skill::COUNSELING
                .iter()
                .map(|&s| {
                    let positive = rng.random_bool(0.15);
                    if positive {
                        truth.insert(s);
                    }
                    let centre: f64 = if positive { 0.6 } else { 0.35 };
                    (centre + rng.random_range(-0.35..0.35)).clamp(0.0, 1.0)
                })
                .collect();
            if truth.is_empty() {
                truth.insert(Skill::NoSkills);
            }
            (row, truth)
        })
        .collect();
    ConfidenceMatrix::from_rows(rows).unwrap()
}

/// Label totals of the reference annotated corpus, in display order.
pub const LABEL_TOTALS: &[(&str, usize)] = &[
    ("Active Listening", 2074),
    ("Clarifying", 2035),
    ("Providing Feedback", 1293),
    ("Closed-Ended Questions", 1243),
    ("Reflecting", 1236),
    ("Empathy", 1124),
    ("Encouraging", 948),
    ("Open-Ended Questions", 834),
    ("Validating", 508),
    ("Advanced Empathy", 492),
    ("Exploring Options", 435),
    ("Reframing", 432),
    ("Focusing", 417),
    ("Paraphrasing", 378),
    ("Summarizing", 240),
    ("Immediacy", 194),
    ("Goal Setting", 168),
    ("Self-Disclosure", 145),
    ("Confronting", 145),
    ("Normalizing", 85),
    ("Others", 29),
    ("No-Skills", 7),
];

/// One line of the transcript format, fields in canonical order.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Row {
    pub session_id: String,
    pub turn: u32,
    pub client: String,
    pub worker: String,
    pub skills: Vec<String>,
}

pub const CORPUS_TURNS: usize = 4734;

/// Builds a 4,734-turn JSONL corpus with exactly the table's label totals.
/// "Others" only lands on turns that also carry a real skill.
pub fn synthetic_jsonl(rng: &mut impl RngCore) -> String {
    let mut labels: Vec<Vec<&str>> = vec![Vec::new(); CORPUS_TURNS];
    // Round-robin from a shuffled start keeps every turn non-empty and
    // never repeats a label on a turn (no label exceeds the turn count).
    let mut cursor = 0usize;
    for &(label, count) in LABEL_TOTALS.iter().filter(|(l, _)| *l != "Others") {
        for _ in 0..count {
            while labels[cursor % CORPUS_TURNS].contains(&label) {
                cursor += 1;
            }
            labels[cursor % CORPUS_TURNS].push(label);
            cursor += 1;
        }
    }
    let others = LABEL_TOTALS.iter().find(|(l, _)| *l == "Others").unwrap().1;
    let mut order: Vec<usize> = (0..CORPUS_TURNS).collect();
    order.shuffle(rng);
    for &i in order.iter().take(others) {
        labels[i].push("others");
    }
    let mut out = String::new();
    for (i, set) in labels.iter().enumerate() {
        let record = Row {
            session_id: format!("session-{:02}", i % 19),
            turn: (i / 19) as u32,
            client: format!("client line {i}"),
            worker: format!("worker line {i}"),
            skills: set.iter().map(|s| s.to_string()).collect(),
        };
        out.push_str(&serde_json::to_string(&record).unwrap());
        out.push('\n');
    }
    out
}

pub fn synthetic_corpus(rng: &mut impl RngCore) -> TranscriptCorpus {
    ingest_reader(synthetic_jsonl(rng).as_bytes(), "synthetic").unwrap()
}
