//! Decision thresholds over per-label confidence scores.
//!
//! Three strategies share one objective evaluation: a single grid-searched
//! threshold for every label, an independent grid search per label, and a
//! genetic algorithm over the joint threshold vector seeded with the other
//! two.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Skill;
use crate::metrics::{harmonic, PredictionRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ThresholdError {
    #[error("confidence matrix has no samples")]
    EmptyMatrix,
    #[error("length mismatch: expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("score {value} for sample {key:?} is outside [0, 1]")]
    ScoreOutOfRange { key: String, value: f64 },
    #[error("sample {0:?} has no ground truth")]
    MissingGroundTruth(String),
    #[error("duplicate sample key {0:?}")]
    DuplicateKey(String),
    #[error("invalid GA parameters: {0}")]
    InvalidParams(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Per-sample, per-label scores. Columns follow `labels`, which for score
/// files is the 20 counseling skills in taxonomy order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMatrix {
    pub labels: Vec<Skill>,
    pub keys: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    /// Empty when the source carries no ground truth for that sample.
    pub truths: Vec<BTreeSet<Skill>>,
}

#[derive(Serialize, Deserialize)]
struct ScoreRecord {
    key: String,
    scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    skills: Vec<Skill>,
}

impl ConfidenceMatrix {
    pub fn new(
        labels: Vec<Skill>,
        keys: Vec<String>,
        scores: Vec<Vec<f64>>,
        truths: Vec<BTreeSet<Skill>>,
    ) -> Result<Self, ThresholdError> {
        let n = keys.len();
        for len in [scores.len(), truths.len()] {
            if len != n {
                return Err(ThresholdError::LengthMismatch { expected: n, actual: len });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (key, row) in keys.iter().zip(&scores) {
            if !seen.insert(key) {
                return Err(ThresholdError::DuplicateKey(key.clone()));
            }
            if row.len() != labels.len() {
                return Err(ThresholdError::LengthMismatch { expected: labels.len(), actual: row.len() });
            }
            if let Some(&value) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(ThresholdError::ScoreOutOfRange { key: key.clone(), value });
            }
        }
        Ok(Self { labels, keys, scores, truths })
    }

    /// Matrix over the 20 counseling skills with generated keys.
    pub fn from_rows(rows: Vec<(Vec<f64>, BTreeSet<Skill>)>) -> Result<Self, ThresholdError> {
        let keys = (0..rows.len()).map(|i| i.to_string()).collect();
        let (scores, truths) = rows.into_iter().unzip();
        Self::new(Skill::COUNSELING.to_vec(), keys, scores, truths)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn row(&self, key: &str) -> Option<&[f64]> {
        self.keys.iter().position(|k| k == key).map(|i| self.scores[i].as_slice())
    }

    /// Reads the score file format: one JSON object per line with `key`,
    /// `scores` (20 values in taxonomy order) and optional `skills`.
    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self, ThresholdError> {
        let mut keys = Vec::new();
        let mut scores = Vec::new();
        let mut truths = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let parse = |message: String| ThresholdError::Parse { line: i + 1, message };
            let line = line.map_err(|e| parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ScoreRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            if record.scores.len() != Skill::COUNSELING.len() {
                return Err(parse(format!("expected 20 scores, got {}", record.scores.len())));
            }
            keys.push(record.key);
            scores.push(record.scores);
            truths.push(record.skills.into_iter().collect());
        }
        Self::new(Skill::COUNSELING.to_vec(), keys, scores, truths)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.len() {
            let record = ScoreRecord {
                key: self.keys[i].clone(),
                scores: self.scores[i].clone(),
                skills: self.truths[i].iter().copied().collect(),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    fn require_truth(&self) -> Result<(), ThresholdError> {
        if self.is_empty() {
            return Err(ThresholdError::EmptyMatrix);
        }
        match self.truths.iter().position(BTreeSet::is_empty) {
            Some(i) => Err(ThresholdError::MissingGroundTruth(self.keys[i].clone())),
            None => Ok(()),
        }
    }
}

/// Labels `{l_j : p_j >= t_j}` for one row, in descending score order
/// (ties by column), or `[No-Skills]` if none pass.
pub fn threshold_row(labels: &[Skill], row: &[f64], thresholds: &[f64]) -> Vec<Skill> {
    let mut passing: Vec<usize> = (0..labels.len()).filter(|&j| row[j] >= thresholds[j]).collect();
    if passing.is_empty() {
        return vec![Skill::NoSkills];
    }
    passing.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    passing.into_iter().map(|j| labels[j]).collect()
}

/// Thresholds every row of the matrix.
pub fn apply(thresholds: &[f64], matrix: &ConfidenceMatrix) -> Result<Vec<PredictionRecord>, ThresholdError> {
    if thresholds.len() != matrix.labels.len() {
        return Err(ThresholdError::LengthMismatch { expected: matrix.labels.len(), actual: thresholds.len() });
    }
    Ok((0..matrix.len())
        .map(|i| PredictionRecord {
            key: matrix.keys[i].clone(),
            predicted: threshold_row(&matrix.labels, &matrix.scores[i], thresholds).into_iter().collect(),
            ground_truth: matrix.truths[i].clone(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    MicroF1,
    MacroF1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Static,
    Independent,
    Joint,
}

/// Ground truth packed for fast objective evaluation.
struct Packed<'a> {
    matrix: &'a ConfidenceMatrix,
    /// Bit `Skill::index()` set when the label is in the truth.
    truth_bits: Vec<u32>,
    truth_len: Vec<usize>,
    column_bits: Vec<u32>,
}

impl<'a> Packed<'a> {
    fn new(matrix: &'a ConfidenceMatrix) -> Self {
        let truth_bits = matrix
            .truths
            .iter()
            .map(|t| t.iter().fold(0u32, |acc, s| acc | 1 << s.index()))
            .collect();
        let truth_len = matrix.truths.iter().map(BTreeSet::len).collect();
        let column_bits = matrix.labels.iter().map(|s| 1u32 << s.index()).collect();
        Self { matrix, truth_bits, truth_len, column_bits }
    }

    /// Same arithmetic as the metrics module applied to `apply(t)`, without
    /// building prediction sets.
    fn objective(&self, t: &[f64], objective: Objective) -> f64 {
        let no_skills = 1u32 << Skill::NoSkills.index();
        let (mut hits_sum, mut pred_sum, mut truth_sum) = (0usize, 0usize, 0usize);
        let (mut p_sum, mut r_sum) = (0.0, 0.0);
        for (i, row) in self.matrix.scores.iter().enumerate() {
            let mut bits = 0u32;
            for (j, &p) in row.iter().enumerate() {
                if p >= t[j] {
                    bits |= self.column_bits[j];
                }
            }
            if bits == 0 {
                bits = no_skills;
            }
            let pred = bits.count_ones() as usize;
            let hits = (bits & self.truth_bits[i]).count_ones() as usize;
            match objective {
                Objective::MicroF1 => {
                    hits_sum += hits;
                    pred_sum += pred;
                    truth_sum += self.truth_len[i];
                }
                Objective::MacroF1 => {
                    p_sum += hits as f64 / pred as f64;
                    r_sum += hits as f64 / self.truth_len[i] as f64;
                }
            }
        }
        match objective {
            Objective::MicroF1 => {
                let p = if pred_sum == 0 { 0.0 } else { hits_sum as f64 / pred_sum as f64 };
                let r = if truth_sum == 0 { 0.0 } else { hits_sum as f64 / truth_sum as f64 };
                harmonic(p, r)
            }
            Objective::MacroF1 => {
                let n = self.matrix.len() as f64;
                harmonic(p_sum / n, r_sum / n)
            }
        }
    }
}

/// Objective value of `apply(thresholds, matrix)`.
pub fn evaluate(matrix: &ConfidenceMatrix, thresholds: &[f64], objective: Objective) -> Result<f64, ThresholdError> {
    matrix.require_truth()?;
    if thresholds.len() != matrix.labels.len() {
        return Err(ThresholdError::LengthMismatch { expected: matrix.labels.len(), actual: thresholds.len() });
    }
    Ok(Packed::new(matrix).objective(thresholds, objective))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub labels: Vec<Skill>,
    pub values: Vec<f64>,
    pub strategy: Strategy,
    pub objective: Objective,
    pub objective_value: f64,
}

#[derive(Serialize, Deserialize)]
struct ThresholdEntry {
    skill: Skill,
    threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct ThresholdFile {
    strategy: Strategy,
    objective: Objective,
    objective_value: f64,
    thresholds: Vec<ThresholdEntry>,
}

impl ThresholdVector {
    pub fn uniform(labels: Vec<Skill>, t: f64) -> Self {
        let values = vec![t; labels.len()];
        Self { labels, values, strategy: Strategy::Static, objective: Objective::MicroF1, objective_value: 0.0 }
    }

    pub fn to_json(&self) -> String {
        let file = ThresholdFile {
            strategy: self.strategy,
            objective: self.objective,
            objective_value: self.objective_value,
            thresholds: self
                .labels
                .iter()
                .zip(&self.values)
                .map(|(&skill, &threshold)| ThresholdEntry { skill, threshold })
                .collect(),
        };
        let mut json = serde_json::to_string_pretty(&file).expect("thresholds serialize");
        json.push('\n');
        json
    }

    pub fn from_json(json: &str) -> Result<Self, ThresholdError> {
        let file: ThresholdFile =
            serde_json::from_str(json).map_err(|e| ThresholdError::Parse { line: e.line(), message: e.to_string() })?;
        if let Some(e) = file.thresholds.iter().find(|e| !(0.0..=1.0).contains(&e.threshold)) {
            return Err(ThresholdError::ScoreOutOfRange { key: e.skill.to_string(), value: e.threshold });
        }
        Ok(Self {
            labels: file.thresholds.iter().map(|e| e.skill).collect(),
            values: file.thresholds.iter().map(|e| e.threshold).collect(),
            strategy: file.strategy,
            objective: file.objective,
            objective_value: file.objective_value,
        })
    }

    /// Thresholds aligned to `labels`; labels missing from the file never fire.
    pub fn aligned_to(&self, labels: &[Skill]) -> Vec<f64> {
        labels
            .iter()
            .map(|s| self.labels.iter().position(|l| l == s).map_or(f64::INFINITY, |i| self.values[i]))
            .collect()
    }
}

/// The 101-point grid `k / 100`.
pub fn grid() -> impl Iterator<Item = f64> + Clone {
    (0..=100).map(|k| k as f64 / 100.0)
}

/// One threshold for every label, chosen by exhaustive grid search. Ties go
/// to the smallest threshold.
pub fn optimize_static(matrix: &ConfidenceMatrix, objective: Objective) -> Result<ThresholdVector, ThresholdError> {
    matrix.require_truth()?;
    let packed = Packed::new(matrix);
    let m = matrix.labels.len();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for t in grid() {
        let value = packed.objective(&vec![t; m], objective);
        if value > best.0 {
            best = (value, t);
        }
    }
    Ok(ThresholdVector {
        labels: matrix.labels.clone(),
        values: vec![best.1; m],
        strategy: Strategy::Static,
        objective,
        objective_value: best.0,
    })
}

/// Threshold for a label with no positive validation examples. Scores of
/// exactly 1.0 still pass it.
pub const NEVER_POSITIVE_THRESHOLD: f64 = 1.0;

/// Per-label grid search on binary F1, ties to the smallest threshold.
/// `objective` only decides which overall value is reported.
pub fn optimize_independent(matrix: &ConfidenceMatrix, objective: Objective) -> Result<ThresholdVector, ThresholdError> {
    matrix.require_truth()?;
    let mut values = Vec::with_capacity(matrix.labels.len());
    for (j, label) in matrix.labels.iter().enumerate() {
        let positives = matrix.truths.iter().filter(|t| t.contains(label)).count();
        if positives == 0 {
            values.push(NEVER_POSITIVE_THRESHOLD);
            continue;
        }
        let mut best = (f64::NEG_INFINITY, 0.0);
        for t in grid() {
            let (mut tp, mut fp) = (0usize, 0usize);
            for (row, truth) in matrix.scores.iter().zip(&matrix.truths) {
                if row[j] >= t {
                    if truth.contains(label) {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            let fn_ = positives - tp;
            let f1 = (2 * tp) as f64 / (2 * tp + fp + fn_) as f64;
            if f1 > best.0 {
                best = (f1, t);
            }
        }
        values.push(best.1);
    }
    let objective_value = Packed::new(matrix).objective(&values, objective);
    Ok(ThresholdVector { labels: matrix.labels.clone(), values, strategy: Strategy::Independent, objective, objective_value })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub mutation_sigma: f64,
    pub elitism: usize,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 64,
            generations: 100,
            tournament_size: 3,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            mutation_sigma: 0.05,
            elitism: 2,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<(), ThresholdError> {
        let bad = |m: &str| Err(ThresholdError::InvalidParams(m.to_string()));
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if self.elitism < 1 || self.elitism > self.population {
            return bad("elitism must be between 1 and the population size");
        }
        if self.tournament_size < 1 {
            return bad("tournament size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad("rates must lie in [0, 1]");
        }
        if !(self.mutation_sigma.is_finite() && self.mutation_sigma >= 0.0) {
            return bad("mutation sigma must be finite and non-negative");
        }
        Ok(())
    }
}

/// Genetic search over the joint threshold vector.
///
/// The initial population holds the static and independent solutions plus
/// uniform random vectors; elitism carries the best individuals forward
/// unchanged, so the result never scores below either seed. Fitness is
/// evaluated in parallel, everything that consumes randomness runs
/// sequentially from a generator seeded with `seed`.
pub fn optimize_joint_ga(
    matrix: &ConfidenceMatrix,
    objective: Objective,
    params: &GaParams,
    seed: u64,
) -> Result<ThresholdVector, ThresholdError> {
    params.validate()?;
    let seeds = [optimize_static(matrix, objective)?, optimize_independent(matrix, objective)?];
    let packed = Packed::new(matrix);
    let m = matrix.labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.mutation_sigma).expect("sigma validated");

    let mut population: Vec<Vec<f64>> = seeds.iter().map(|s| s.values.clone()).collect();
    population.truncate(params.population);
    while population.len() < params.population {
        population.push((0..m).map(|_| rng.random::<f64>()).collect());
    }
    let score = |pop: &[Vec<f64>]| -> Vec<f64> { pop.par_iter().map(|t| packed.objective(t, objective)).collect() };
    let mut fitness = score(&population);

    for _ in 0..params.generations {
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
        let mut next: Vec<Vec<f64>> = order[..params.elitism].iter().map(|&i| population[i].clone()).collect();

        let tournament = |rng: &mut ChaCha8Rng| -> usize {
            let mut best = rng.random_range(0..population.len());
            for _ in 1..params.tournament_size {
                let challenger = rng.random_range(0..population.len());
                if fitness[challenger] > fitness[best] {
                    best = challenger;
                }
            }
            best
        };
        while next.len() < params.population {
            let a = &population[tournament(&mut rng)];
            let b = &population[tournament(&mut rng)];
            let mut child = if rng.random::<f64>() < params.crossover_rate {
                a.iter().zip(b).map(|(&x, &y)| if rng.random::<bool>() { x } else { y }).collect()
            } else {
                a.clone()
            };
            for gene in child.iter_mut() {
                if rng.random::<f64>() < params.mutation_rate {
                    *gene = (*gene + noise.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
            next.push(child);
        }
        population = next;
        fitness = score(&population);
    }

    let best = (0..population.len())
        .max_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(b.cmp(&a)))
        .expect("population is non-empty");
    Ok(ThresholdVector {
        labels: matrix.labels.clone(),
        values: population[best].clone(),
        strategy: Strategy::Joint,
        objective,
        objective_value: fitness[best],
    })
}
