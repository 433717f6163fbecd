use std::collections::BTreeSet;
use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use switch_core::classifier::Backend;
use switch_core::config::{Config, IdScheme};
use switch_core::gateway::{Gateway, MockProvider, MockRule, MockScript, RetryPolicy};
use switch_core::metrics::{macro_metrics, micro_metrics, PredictionRecord};
use switch_core::mi::{skill_score, SkillCounts};
use switch_core::retrieval::{Bm25Params, EmbeddingIndex, SparseIndex};
use switch_core::session::{MemoryStore, SessionService};
use switch_core::simulator::ProfileRegistry;
use switch_core::thresholds::{optimize_independent, optimize_joint_ga, optimize_static, ConfidenceMatrix, GaParams, Objective};
use switch_core::{MiStage, Skill, StageWeightTable};

const WORDS: &[&str] = &[
    "feel", "work", "mother", "drinking", "tired", "angry", "help", "job", "sleep", "money", "friends", "school",
    "worried", "change", "maybe", "never", "always", "family", "week", "talk",
];

fn doc(rng: &mut ChaCha8Rng) -> String {
    (0..rng.random_range(8..40)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn records(rng: &mut ChaCha8Rng, n: usize) -> Vec<PredictionRecord> {
    let pick = |rng: &mut ChaCha8Rng| -> BTreeSet<Skill> {
        (0..rng.random_range(1..4)).map(|_| Skill::COUNSELING[rng.random_range(0..20)]).collect()
    };
    (0..n).map(|i| PredictionRecord::new(i.to_string(), pick(rng), pick(rng))).collect()
}

fn matrix(rng: &mut ChaCha8Rng, n: usize) -> ConfidenceMatrix {
    let rows = (0..n)
        .map(|_| {
            let scores: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            let mut truth: BTreeSet<Skill> = (0..20).filter(|&j| scores[j] > 0.7).map(|j| Skill::COUNSELING[j]).collect();
            if truth.is_empty() {
                truth.insert(Skill::COUNSELING[rng.random_range(0..20)]);
            }
            (scores, truth)
        })
        .collect();
    ConfidenceMatrix::from_rows(rows).unwrap()
}

fn retrieval(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let docs: Vec<String> = (0..3787).map(|_| doc(&mut rng)).collect();
    c.bench_function("bm25/build 3787", |b| b.iter(|| SparseIndex::from_texts(black_box(&docs), Bm25Params::default()).unwrap()));
    let index = SparseIndex::from_texts(&docs, Bm25Params::default()).unwrap();
    let query = doc(&mut rng);
    c.bench_function("bm25/top8", |b| b.iter(|| index.retrieve_topk(black_box(&query), 8).unwrap()));
    let vectors: Vec<Vec<f32>> = (0..3787).map(|_| (0..256).map(|_| rng.random::<f32>() - 0.5).collect()).collect();
    let dense = EmbeddingIndex::from_vectors("bench", vectors).unwrap();
    let q: Vec<f32> = (0..256).map(|_| rng.random::<f32>() - 0.5).collect();
    c.bench_function("dense/top8 d=256", |b| b.iter(|| dense.topk_by_vector(black_box(&q), 8).unwrap()));
}

fn scoring(c: &mut Criterion) {
    let counts: SkillCounts = Skill::ALL.iter().map(|&s| (s, 3)).collect();
    let weights = StageWeightTable::builtin();
    c.bench_function("skill_score", |b| b.iter(|| skill_score(black_box(&counts), MiStage::Contemplation, weights)));
    let recs = records(&mut ChaCha8Rng::seed_from_u64(2), 947);
    c.bench_function("metrics/macro+micro 947", |b| {
        b.iter(|| (macro_metrics(black_box(&recs)).unwrap(), micro_metrics(black_box(&recs)).unwrap()))
    });
}

fn thresholds(c: &mut Criterion) {
    let m = matrix(&mut ChaCha8Rng::seed_from_u64(3), 379);
    c.bench_function("thresholds/static 379", |b| b.iter(|| optimize_static(black_box(&m), Objective::MicroF1).unwrap()));
    c.bench_function("thresholds/independent 379", |b| {
        b.iter(|| optimize_independent(black_box(&m), Objective::MicroF1).unwrap())
    });
    let mut group = c.benchmark_group("thresholds/joint");
    group.sample_size(10);
    group.bench_function("ga default 379", |b| {
        b.iter(|| optimize_joint_ga(black_box(&m), Objective::MicroF1, &GaParams::default(), 7).unwrap())
    });
    group.finish();
}

const REPLY: &str =
    r#"{"automatic_thoughts": "t", "emotions": ["Wary"], "openness": "Guarded.", "behaviors": ["Shrugs"], "message": "I guess."}"#;

fn session(c: &mut Criterion) {
    let setup = || {
        let script = MockScript::default()
            .rule(MockRule::purpose("classify", ["No-Skills"]).sticky())
            .rule(MockRule::purpose("client-reply", [REPLY]).sticky())
            .rule(MockRule::purpose("cost-benefit", ["{}"]).sticky())
            .rule(MockRule::purpose("gate", ["FINAL: NO"]).sticky());
        let gateway = Gateway::new(Arc::new(MockProvider::new(script))).with_retry(RetryPolicy::immediate(1));
        let mut config = Config::default();
        config.session.id_scheme = IdScheme::Sequential;
        let service = SessionService::new(
            config,
            Arc::new(gateway),
            Backend::PromptSkillList,
            ProfileRegistry::builtin(),
            Arc::new(MemoryStore::default()),
        )
        .unwrap();
        let id = service.create_session("daniel").unwrap().id;
        (service, id)
    };
    c.bench_function("session/turn (mock)", |b| {
        b.iter_batched(setup, |(service, id)| service.post_message(&id, "How was your week?").unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, retrieval, scoring, thresholds, session);
criterion_main!(benches);
