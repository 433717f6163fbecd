//! Demonstration pools and top-k retrieval.
//!
//! Sparse retrieval is Okapi BM25 over a lowercase alphanumeric tokenizer
//! with no stemming or stopwords. Dense retrieval is exact cosine search over
//! unit vectors obtained through the gateway. Both return results in
//! descending score order with ties broken by ascending entry ordinal.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedTurn, TranscriptCorpus};
use crate::gateway::{Gateway, GatewayError};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("demonstration pool is empty")]
    EmptyPool,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("embedding dimension mismatch: index has {expected}, query has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding model mismatch: index built with {index:?}, gateway uses {gateway:?}")]
    ModelMismatch { index: String, gateway: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Annotated training turns available as in-context demonstrations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemonstrationPool {
    pub entries: Vec<AnnotatedTurn>,
}

impl DemonstrationPool {
    pub fn new(entries: Vec<AnnotatedTurn>) -> Self {
        Self { entries }
    }

    pub fn from_corpus(train: &TranscriptCorpus) -> Self {
        Self::new(train.turns.clone())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_text(&self, ordinal: usize) -> String {
        self.entries[ordinal].pair_text()
    }

    pub fn index_texts(&self) -> Vec<String> {
        self.entries.iter().map(AnnotatedTurn::pair_text).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub ordinal: usize,
    pub score: f64,
}

fn rank(mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    hits.sort_by(|a, b| {
        b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then(a.ordinal.cmp(&b.ordinal))
    });
    hits.truncate(k);
    hits
}

/// BM25 statistics over a pool's index texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseIndex {
    pub params: Bm25Params,
    pub doc_freq: BTreeMap<String, usize>,
    pub term_freqs: Vec<BTreeMap<String, usize>>,
    pub doc_lengths: Vec<usize>,
    pub avg_doc_length: f64,
}

impl SparseIndex {
    pub fn build(pool: &DemonstrationPool, params: Bm25Params) -> Result<Self, RetrievalError> {
        Self::from_texts(&pool.index_texts(), params)
    }

    pub fn from_texts(texts: &[String], params: Bm25Params) -> Result<Self, RetrievalError> {
        if texts.is_empty() {
            return Err(RetrievalError::EmptyPool);
        }
        let mut doc_freq = BTreeMap::new();
        let mut term_freqs = Vec::with_capacity(texts.len());
        let mut doc_lengths = Vec::with_capacity(texts.len());
        for text in texts {
            let tokens = tokenize(text);
            doc_lengths.push(tokens.len());
            let mut tf: BTreeMap<String, usize> = BTreeMap::new();
            for token in tokens {
                *tf.entry(token).or_insert(0) += 1;
            }
            for term in tf.keys() {
                *doc_freq.entry(term.clone()).or_insert(0) += 1;
            }
            term_freqs.push(tf);
        }
        let avg_doc_length = doc_lengths.iter().sum::<usize>() as f64 / texts.len() as f64;
        Ok(Self { params, doc_freq, term_freqs, doc_lengths, avg_doc_length })
    }

    pub fn len(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_lengths.is_empty()
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`, which stays positive for terms
    /// present in most documents.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// BM25 score of document `ordinal` for an already tokenized query.
    /// Repeated query terms count once per occurrence.
    pub fn score_tokens(&self, query: &[String], ordinal: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf_map = &self.term_freqs[ordinal];
        let len_norm = if self.avg_doc_length > 0.0 {
            self.doc_lengths[ordinal] as f64 / self.avg_doc_length
        } else {
            0.0
        };
        query
            .iter()
            .filter_map(|term| {
                let tf = *tf_map.get(term)? as f64;
                Some(self.idf(term) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len_norm)))
            })
            .fold(0.0, |acc, x| acc + x)
    }

    pub fn score(&self, query: &str, ordinal: usize) -> f64 {
        self.score_tokens(&tokenize(query), ordinal)
    }

    /// Scores every document and returns the best `min(k, N)`.
    pub fn retrieve_topk(&self, query: &str, k: usize) -> Result<Vec<Hit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if self.is_empty() {
            return Err(RetrievalError::EmptyPool);
        }
        let tokens = tokenize(query);
        let hits = (0..self.len()).map(|ordinal| Hit { ordinal, score: self.score_tokens(&tokens, ordinal) }).collect();
        Ok(rank(hits, k))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

/// Unit-norm embeddings of a pool's index texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    pub model: String,
    pub dim: usize,
    pub vectors: Vec<Vec<f32>>,
}

impl EmbeddingIndex {
    pub fn build(pool: &DemonstrationPool, gateway: &Gateway) -> Result<Self, RetrievalError> {
        if pool.is_empty() {
            return Err(RetrievalError::EmptyPool);
        }
        let vectors = gateway.embed(&pool.index_texts())?;
        let model = gateway.embedding_model().unwrap_or_default().to_string();
        Self::from_vectors(model, vectors)
    }

    /// Builds an index from raw vectors, normalizing each.
    pub fn from_vectors(model: impl Into<String>, vectors: Vec<Vec<f32>>) -> Result<Self, RetrievalError> {
        let dim = vectors.first().map(Vec::len).ok_or(RetrievalError::EmptyPool)?;
        let mut unit = Vec::with_capacity(vectors.len());
        for v in vectors {
            if v.len() != dim {
                return Err(RetrievalError::DimensionMismatch { expected: dim, actual: v.len() });
            }
            unit.push(crate::gateway::normalize(v.clone()).unwrap_or(v));
        }
        Ok(Self { model: model.into(), dim, vectors: unit })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Exact cosine top-k for a query vector of any positive scale.
    pub fn topk_by_vector(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if self.is_empty() {
            return Err(RetrievalError::EmptyPool);
        }
        if query.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch { expected: self.dim, actual: query.len() });
        }
        let qnorm = query.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        let hits = self
            .vectors
            .iter()
            .enumerate()
            .map(|(ordinal, v)| {
                let dot: f64 = v.iter().zip(query).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                let score = if qnorm > 0.0 { dot / qnorm } else { 0.0 };
                Hit { ordinal, score }
            })
            .collect();
        Ok(rank(hits, k))
    }
}

/// Embeds `query` through the gateway and searches `index`.
pub fn dense_topk(index: &EmbeddingIndex, query: &str, k: usize, gateway: &Gateway) -> Result<Vec<Hit>, RetrievalError> {
    if let Some(model) = gateway.embedding_model() {
        if !index.model.is_empty() && model != index.model {
            return Err(RetrievalError::ModelMismatch { index: index.model.clone(), gateway: model.to_string() });
        }
    }
    let vector = gateway.embed(&[query.to_string()])?.remove(0);
    index.topk_by_vector(&vector, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    Bm25,
    Dense,
}

/// A pool together with whichever index its retriever needs.
#[derive(Debug, Clone)]
pub enum Retriever {
    Sparse { pool: DemonstrationPool, index: SparseIndex },
    Dense { pool: DemonstrationPool, index: EmbeddingIndex },
}

impl Retriever {
    pub fn sparse(pool: DemonstrationPool, params: Bm25Params) -> Result<Self, RetrievalError> {
        let index = SparseIndex::build(&pool, params)?;
        Ok(Retriever::Sparse { pool, index })
    }

    pub fn dense(pool: DemonstrationPool, gateway: &Gateway) -> Result<Self, RetrievalError> {
        let index = EmbeddingIndex::build(&pool, gateway)?;
        Ok(Retriever::Dense { pool, index })
    }

    pub fn kind(&self) -> RetrieverKind {
        match self {
            Retriever::Sparse { .. } => RetrieverKind::Bm25,
            Retriever::Dense { .. } => RetrieverKind::Dense,
        }
    }

    pub fn pool(&self) -> &DemonstrationPool {
        match self {
            Retriever::Sparse { pool, .. } | Retriever::Dense { pool, .. } => pool,
        }
    }

    /// Top-k demonstrations for a query, best first.
    pub fn demonstrations(&self, query: &str, k: usize, gateway: &Gateway) -> Result<Vec<&AnnotatedTurn>, RetrievalError> {
        let hits = match self {
            Retriever::Sparse { index, .. } => index.retrieve_topk(query, k)?,
            Retriever::Dense { index, .. } => dense_topk(index, query, k, gateway)?,
        };
        Ok(hits.into_iter().map(|h| &self.pool().entries[h.ordinal]).collect())
    }
}
