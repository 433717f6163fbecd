//! Annotated transcript corpora: ingestion, export, splits and label
//! distribution reports.
//!
//! The on-disk format is newline-delimited JSON, one counselor turn per line:
//!
//! ```text
//! {"session_id":"s01","turn":3,"client":"...","worker":"...","skills":["Empathy","Reflecting"]}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{normalize_label, parse_skill_label, Skill};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown skill label {label:?}")]
    UnknownSkill { line: usize, label: String },
    #[error("duplicate turn {session_id}#{turn}")]
    DuplicateTurn { session_id: String, turn: u32 },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

/// One counselor turn with its resolved ground-truth skill set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnnotatedTurn {
    pub session_id: String,
    pub turn_index: u32,
    pub client_text: String,
    pub worker_text: String,
    pub ground_truth: BTreeSet<Skill>,
}

impl AnnotatedTurn {
    /// Sample key used across prediction and score files: `session#turn`.
    pub fn key(&self) -> String {
        format!("{}#{}", self.session_id, self.turn_index)
    }

    /// Client and worker text joined, as indexed for retrieval.
    pub fn pair_text(&self) -> String {
        format!("{} {}", self.client_text, self.worker_text)
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    session_id: String,
    turn: u32,
    client: String,
    worker: String,
    skills: Vec<String>,
}

impl From<&AnnotatedTurn> for Record {
    fn from(t: &AnnotatedTurn) -> Self {
        Record {
            session_id: t.session_id.clone(),
            turn: t.turn_index,
            client: t.client_text.clone(),
            worker: t.worker_text.clone(),
            skills: t.ground_truth.iter().map(|s| s.name().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TranscriptCorpus {
    pub turns: Vec<AnnotatedTurn>,
    pub provenance: String,
    /// Rows dropped at ingest because they were labeled only "others".
    pub dropped_rows: usize,
    /// "others" label occurrences removed at ingest (dropped rows included).
    pub excluded_other_labels: usize,
}

fn is_others(label: &str) -> bool {
    matches!(normalize_label(label).as_str(), "others" | "other")
}

impl TranscriptCorpus {
    pub fn new(turns: Vec<AnnotatedTurn>, provenance: impl Into<String>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for t in &turns {
            if t.ground_truth.is_empty() {
                return Err(CorpusError::Parse {
                    line: 0,
                    message: format!("turn {} has no ground-truth skills", t.key()),
                });
            }
            if !seen.insert((t.session_id.clone(), t.turn_index)) {
                return Err(CorpusError::DuplicateTurn {
                    session_id: t.session_id.clone(),
                    turn: t.turn_index,
                });
            }
        }
        Ok(Self { turns, provenance: provenance.into(), dropped_rows: 0, excluded_other_labels: 0 })
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    fn subset(&self, indices: &[usize], provenance: String) -> TranscriptCorpus {
        TranscriptCorpus {
            turns: indices.iter().map(|&i| self.turns[i].clone()).collect(),
            provenance,
            dropped_rows: 0,
            excluded_other_labels: 0,
        }
    }

    /// Finds the turn preceding `turn` in the same session, if present.
    pub fn previous_turn(&self, turn: &AnnotatedTurn) -> Option<&AnnotatedTurn> {
        self.turns
            .iter()
            .filter(|t| t.session_id == turn.session_id && t.turn_index < turn.turn_index)
            .max_by_key(|t| t.turn_index)
    }

    /// Serializes in the ingest format, one record per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for turn in &self.turns {
            let line = serde_json::to_string(&Record::from(turn)).expect("record serializes");
            out.write_all(line.as_bytes())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn export(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let mut file = std::io::BufWriter::new(fs::File::create(path)?);
        self.write_jsonl(&mut file)?;
        file.flush()?;
        Ok(())
    }
}

/// Reads a transcript file.
pub fn ingest(path: impl AsRef<Path>) -> Result<TranscriptCorpus, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    ingest_reader(file, path.display().to_string())
}

/// Parses transcript records from any reader. Blank lines are ignored;
/// a source with no records is an error.
pub fn ingest_reader<R: Read>(reader: R, provenance: impl Into<String>) -> Result<TranscriptCorpus, CorpusError> {
    let mut turns = Vec::new();
    let mut seen = HashSet::new();
    let mut dropped_rows = 0;
    let mut excluded_other_labels = 0;
    let mut records = 0;

    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records += 1;
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        if record.skills.is_empty() {
            return Err(CorpusError::Parse { line: line_no, message: "empty skills list".into() });
        }
        let mut ground_truth = BTreeSet::new();
        let mut others = 0;
        for label in &record.skills {
            if is_others(label) {
                others += 1;
                continue;
            }
            let skill = parse_skill_label(label)
                .map_err(|_| CorpusError::UnknownSkill { line: line_no, label: label.clone() })?;
            ground_truth.insert(skill);
        }
        excluded_other_labels += others;
        if ground_truth.is_empty() {
            dropped_rows += 1;
            continue;
        }
        if !seen.insert((record.session_id.clone(), record.turn)) {
            return Err(CorpusError::DuplicateTurn { session_id: record.session_id, turn: record.turn });
        }
        turns.push(AnnotatedTurn {
            session_id: record.session_id,
            turn_index: record.turn,
            client_text: record.client,
            worker_text: record.worker,
            ground_truth,
        });
    }
    if records == 0 {
        return Err(CorpusError::Parse { line: 0, message: "no records".into() });
    }
    if dropped_rows > 0 {
        tracing::warn!(dropped_rows, "dropped rows labeled only as \"others\"");
    }
    Ok(TranscriptCorpus {
        turns,
        provenance: provenance.into(),
        dropped_rows,
        excluded_other_labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Turns (utterance pairs) are assigned independently.
    #[default]
    Turn,
    /// Whole sessions are assigned, so no session spans both sides.
    Session,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction_of_train: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8, validation_fraction_of_train: 0.1, seed: 0, mode: SplitMode::Turn }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<(), CorpusError> {
        for (name, f) in [
            ("train_fraction", self.train_fraction),
            ("validation_fraction_of_train", self.validation_fraction_of_train),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(CorpusError::InvalidSplit(format!("{name} must be in (0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

/// `floor(fraction * n)`, tolerant of representation error just below an
/// integer.
fn floor_share(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Partitions `indices` so the first side gets `floor(fraction * n)` items
/// and the rest go to the second side. Both sides keep corpus order.
fn partition(corpus: &TranscriptCorpus, fraction: f64, seed: u64, mode: SplitMode) -> (Vec<usize>, Vec<usize>) {
    let n = corpus.len();
    let target = floor_share(fraction, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first: Vec<usize> = match mode {
        SplitMode::Turn => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order.truncate(target);
            order
        }
        SplitMode::Session => {
            let mut sessions: Vec<&str> = Vec::new();
            for t in &corpus.turns {
                if !sessions.contains(&t.session_id.as_str()) {
                    sessions.push(&t.session_id);
                }
            }
            sessions.shuffle(&mut rng);
            let mut chosen = Vec::new();
            for s in sessions {
                let members: Vec<usize> =
                    (0..n).filter(|&i| corpus.turns[i].session_id == s).collect();
                if chosen.len() + members.len() <= target {
                    chosen.extend(members);
                }
            }
            chosen
        }
    };
    first.sort_unstable();
    let in_first: HashSet<usize> = first.iter().copied().collect();
    let second = (0..n).filter(|i| !in_first.contains(i)).collect();
    (first, second)
}

/// Train/test split. Train gets `floor(train_fraction * N)` turns, test the
/// remainder; membership is a pure function of the seed.
pub fn split(corpus: &TranscriptCorpus, spec: &SplitSpec) -> Result<(TranscriptCorpus, TranscriptCorpus), CorpusError> {
    spec.validate()?;
    let (train, test) = partition(corpus, spec.train_fraction, spec.seed, spec.mode);
    Ok((
        corpus.subset(&train, format!("{} [train]", corpus.provenance)),
        corpus.subset(&test, format!("{} [test]", corpus.provenance)),
    ))
}

/// Carves a validation subset out of a training corpus for threshold tuning.
/// Validation gets `N - floor((1 - fraction) * N)` turns.
pub fn carve_validation(train: &TranscriptCorpus, spec: &SplitSpec) -> Result<(TranscriptCorpus, TranscriptCorpus), CorpusError> {
    spec.validate()?;
    let keep = 1.0 - spec.validation_fraction_of_train;
    let (fit, val) = partition(train, keep, spec.seed.wrapping_add(1), spec.mode);
    Ok((
        train.subset(&fit, format!("{} [fit]", train.provenance)),
        train.subset(&val, format!("{} [validation]", train.provenance)),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub label: String,
    pub count: usize,
    pub proportion: f64,
}

/// Label frequencies and per-turn label counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub turns: usize,
    pub total_labels: usize,
    /// Sorted by descending count; ties keep taxonomy order. Includes an
    /// "Others" row when such labels were excluded at ingest.
    pub rows: Vec<DistributionRow>,
    /// Number of skills per turn -> number of turns.
    pub skills_per_turn: BTreeMap<usize, usize>,
    pub mean_skills_per_turn: f64,
}

pub const OTHERS_LABEL: &str = "Others";

pub fn distribution_report(corpus: &TranscriptCorpus) -> DistributionReport {
    let mut counts = [0usize; 21];
    let mut histogram = BTreeMap::new();
    for turn in &corpus.turns {
        for skill in &turn.ground_truth {
            counts[skill.index()] += 1;
        }
        *histogram.entry(turn.ground_truth.len()).or_insert(0) += 1;
    }
    let mut entries: Vec<(String, usize)> = Skill::ALL
        .iter()
        .filter(|s| counts[s.index()] > 0)
        .map(|s| (s.name().to_string(), counts[s.index()]))
        .collect();
    if corpus.excluded_other_labels > 0 {
        entries.push((OTHERS_LABEL.to_string(), corpus.excluded_other_labels));
    }
    // Stable sort keeps taxonomy order among equal counts.
    entries.sort_by_key(|e| std::cmp::Reverse(e.1));
    let total: usize = entries.iter().map(|e| e.1).sum();
    let rows = entries
        .into_iter()
        .map(|(label, count)| DistributionRow { label, count, proportion: count as f64 / total as f64 })
        .collect();
    let assigned: usize = corpus.turns.iter().map(|t| t.ground_truth.len()).sum();
    let mean = if corpus.is_empty() { 0.0 } else { assigned as f64 / corpus.len() as f64 };
    DistributionReport {
        turns: corpus.len(),
        total_labels: total,
        rows,
        skills_per_turn: histogram,
        mean_skills_per_turn: mean,
    }
}

impl DistributionReport {
    pub fn count(&self, label: &str) -> Option<usize> {
        self.rows.iter().find(|r| r.label == label).map(|r| r.count)
    }

    pub fn proportion(&self, label: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.label == label).map(|r| r.proportion)
    }

    /// Aligned plain-text table: skill, total, proportion.
    pub fn render_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:>6}  {:>10}\n", "Skill", "Total", "Proportion");
        for row in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>6}  {:>9.2}%\n",
                row.label,
                row.count,
                row.proportion * 100.0
            ));
        }
        out.push_str(&format!(
            "\nturns: {}  labels: {}  mean skills/turn: {:.2}\n",
            self.turns, self.total_labels, self.mean_skills_per_turn
        ));
        out.push_str("skills per turn:");
        for (k, v) in &self.skills_per_turn {
            out.push_str(&format!(" {k}:{v}"));
        }
        out.push('\n');
        out
    }
}
