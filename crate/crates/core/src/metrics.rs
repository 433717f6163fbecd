//! Multi-label evaluation: any-overlap accuracy, sample-averaged (macro) and
//! pooled (micro) precision/recall/F1, per-skill F1, and focal loss.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::domain::Skill;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no records to evaluate")]
    EmptyInput,
    #[error("focal loss is undefined at p = {0}")]
    Domain(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub key: String,
    pub predicted: BTreeSet<Skill>,
    pub ground_truth: BTreeSet<Skill>,
}

impl PredictionRecord {
    pub fn new(key: impl Into<String>, predicted: impl IntoIterator<Item = Skill>, ground_truth: impl IntoIterator<Item = Skill>) -> Self {
        Self {
            key: key.into(),
            predicted: predicted.into_iter().collect(),
            ground_truth: ground_truth.into_iter().collect(),
        }
    }

    fn hits(&self) -> usize {
        self.predicted.intersection(&self.ground_truth).count()
    }
}

fn nonempty(records: &[PredictionRecord]) -> Result<(), MetricsError> {
    if records.is_empty() {
        Err(MetricsError::EmptyInput)
    } else {
        Ok(())
    }
}

pub(crate) fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Fraction of records whose prediction shares at least one label with the
/// ground truth.
pub fn accuracy_any_overlap(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    nonempty(records)?;
    let hits = records.iter().filter(|r| r.hits() > 0).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Per-sample precision and recall averaged over samples; F1 is the harmonic
/// mean of the two averages. An empty prediction has precision 0.
pub fn macro_metrics(records: &[PredictionRecord]) -> Result<(f64, f64, f64), MetricsError> {
    nonempty(records)?;
    let n = records.len() as f64;
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    for r in records {
        let hits = r.hits() as f64;
        if !r.predicted.is_empty() {
            p_sum += hits / r.predicted.len() as f64;
        }
        if !r.ground_truth.is_empty() {
            r_sum += hits / r.ground_truth.len() as f64;
        }
    }
    let (p, r) = (p_sum / n, r_sum / n);
    Ok((p, r, harmonic(p, r)))
}

/// Intersections, predictions and truths summed over the whole set.
pub fn micro_metrics(records: &[PredictionRecord]) -> Result<(f64, f64, f64), MetricsError> {
    nonempty(records)?;
    let (mut hits, mut predicted, mut truth) = (0usize, 0usize, 0usize);
    for r in records {
        hits += r.hits();
        predicted += r.predicted.len();
        truth += r.ground_truth.len();
    }
    let p = if predicted == 0 { 0.0 } else { hits as f64 / predicted as f64 };
    let r = if truth == 0 { 0.0 } else { hits as f64 / truth as f64 };
    Ok((p, r, harmonic(p, r)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    /// `2TP / (2TP + FP + FN)`, 0 when the label never occurs.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

pub fn confusion(records: &[PredictionRecord], skill: Skill) -> Confusion {
    let mut c = Confusion::default();
    for r in records {
        match (r.predicted.contains(&skill), r.ground_truth.contains(&skill)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

/// Binary F1 for each of the 21 labels.
pub fn per_skill_f1(records: &[PredictionRecord]) -> Result<BTreeMap<Skill, f64>, MetricsError> {
    nonempty(records)?;
    Ok(Skill::ALL.iter().map(|&s| (s, confusion(records, s).f1())).collect())
}

pub fn avg_predicted_skills(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    nonempty(records)?;
    Ok(records.iter().map(|r| r.predicted.len()).sum::<usize>() as f64 / records.len() as f64)
}

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: FOCAL_ALPHA, gamma: FOCAL_GAMMA }
    }
}

/// `-alpha * (1 - p_t)^gamma * ln(p_t)` with `p_t = p` for positives and
/// `1 - p` for negatives.
pub fn focal_loss(p: f64, is_positive: bool, alpha: f64, gamma: f64) -> Result<f64, MetricsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(MetricsError::Domain(p));
    }
    let pt = if is_positive { p } else { 1.0 - p };
    Ok(-alpha * (1.0 - pt).powf(gamma) * pt.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub accuracy: f64,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub micro_p: f64,
    pub micro_r: f64,
    pub micro_f1: f64,
    pub avg_predicted_skills: f64,
    pub per_skill_f1: BTreeMap<Skill, f64>,
}

impl MetricsReport {
    pub fn compute(records: &[PredictionRecord]) -> Result<Self, MetricsError> {
        let (macro_p, macro_r, macro_f1) = macro_metrics(records)?;
        let (micro_p, micro_r, micro_f1) = micro_metrics(records)?;
        Ok(Self {
            samples: records.len(),
            accuracy: accuracy_any_overlap(records)?,
            macro_p,
            macro_r,
            macro_f1,
            micro_p,
            micro_r,
            micro_f1,
            avg_predicted_skills: avg_predicted_skills(records)?,
            per_skill_f1: per_skill_f1(records)?,
        })
    }

    /// One-row summary table grouped like the classification comparison:
    /// accuracy, macro P/R/F1, micro P/R/F1, average predicted skills.
    pub fn render_summary(&self, method: &str) -> String {
        render_summary_table(&[(method, self)])
    }

    /// Per-skill F1 for the 20 counseling skills.
    pub fn render_per_skill(&self, method: &str) -> String {
        render_per_skill_table(&[(method, self)])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn render_summary_table(rows: &[(&str, &MetricsReport)]) -> String {
    let width = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(6).max(6);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>26}  {:>26}  {:>10}\n",
        "", "", "Macro", "Micro", ""
    );
    out.push_str(&format!(
        "{:<width$}  {:>8}  {:>8} {:>8} {:>8}  {:>8} {:>8} {:>8}  {:>10}\n",
        "Method", "Accuracy", "P", "R", "F1", "P", "R", "F1", "Avg skills"
    ));
    for (method, r) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>8.4}  {:>8.4} {:>8.4} {:>8.4}  {:>8.4} {:>8.4} {:>8.4}  {:>10.2}\n",
            method, r.accuracy, r.macro_p, r.macro_r, r.macro_f1, r.micro_p, r.micro_r, r.micro_f1,
            r.avg_predicted_skills
        ));
    }
    out
}

pub fn render_per_skill_table(rows: &[(&str, &MetricsReport)]) -> String {
    let name_width = Skill::COUNSELING.iter().map(|s| s.name().len()).max().unwrap_or(5);
    let mut out = format!("{:<name_width$}", "Skill");
    for (method, _) in rows {
        out.push_str(&format!("  {:>10}", method));
    }
    out.push('\n');
    for skill in Skill::COUNSELING {
        out.push_str(&format!("{:<name_width$}", skill.name()));
        for (_, r) in rows {
            out.push_str(&format!("  {:>10.4}", r.per_skill_f1.get(&skill).copied().unwrap_or(0.0)));
        }
        out.push('\n');
    }
    out
}

pub fn write_predictions<W: Write>(records: &[PredictionRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PredictionRecord>, MetricsError> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| MetricsError::Parse { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(&line)
            .map_err(|e| MetricsError::Parse { line: i + 1, message: e.to_string() })?;
        if record.ground_truth.is_empty() {
            return Err(MetricsError::Parse { line: i + 1, message: "empty ground truth".into() });
        }
        records.push(record);
    }
    Ok(records)
}
