//! Builds gateways, backends and stores from the configuration.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use switch_core::classifier::Backend;
use switch_core::config::Config;
use switch_core::gateway::{EmbeddingCache, Gateway, MockEmbedder, MockProvider, MockScript, OpenAiProvider, RetryPolicy};
use switch_core::retrieval::{DemonstrationPool, Retriever};
use switch_core::session::{EventStore, FileStore, MemoryStore};
use switch_core::simulator::ProfileRegistry;
use switch_core::thresholds::ConfidenceMatrix;

use crate::BackendArg;

const MOCK_EMBED_DIM: usize = 64;

pub fn gateway(config: &Config, mock: Option<&Path>) -> Result<Gateway> {
    let gateway = match mock {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let script = MockScript::from_json(&text).with_context(|| format!("parsing mock script {}", path.display()))?;
            Gateway::new(Arc::new(MockProvider::new(script)))
                .with_embedder(Arc::new(MockEmbedder::hashed("mock", MOCK_EMBED_DIM)))
                .with_retry(RetryPolicy::immediate(config.llm.retry.max_attempts))
        }
        None => {
            let llm = config.llm.clone().with_env_overrides();
            let provider = Arc::new(OpenAiProvider::from_config(&llm).map_err(|e| anyhow::anyhow!("{e}"))?);
            Gateway::new(provider.clone())
                .with_embedder(provider)
                .with_retry(llm.retry.clone())
                .with_default_model(llm.model.clone())
        }
    };
    let cache = match &config.embedding_cache_dir {
        Some(dir) => EmbeddingCache::on_disk(dir.clone()),
        None => EmbeddingCache::in_memory(),
    };
    Ok(gateway.with_max_in_flight(config.llm.max_in_flight).with_cache(cache))
}

pub struct BackendInputs<'a> {
    pub pool: Option<&'a Path>,
    pub k: Option<usize>,
    pub scores: Option<&'a Path>,
    pub thresholds: Option<&'a Path>,
}

pub fn backend(arg: BackendArg, config: &Config, gateway: &Gateway, inputs: BackendInputs<'_>) -> Result<Backend> {
    let pool = || -> Result<DemonstrationPool> {
        let Some(path) = inputs.pool else { bail!("--pool is required for the in-context backends") };
        Ok(DemonstrationPool::from_corpus(&crate::load_corpus(path)?))
    };
    let k = inputs.k.unwrap_or(config.retrieval.k);
    Ok(match arg {
        BackendArg::Baseline => Backend::PromptSkillList,
        BackendArg::BaselineDefex => Backend::PromptSkillDefEx,
        BackendArg::IclBm25 => {
            Backend::InContext { retriever: Arc::new(Retriever::sparse(pool()?, config.retrieval.bm25)?), k }
        }
        BackendArg::IclDense => Backend::InContext { retriever: Arc::new(Retriever::dense(pool()?, gateway)?), k },
        BackendArg::Scores => {
            let (Some(scores), Some(thresholds)) = (inputs.scores, inputs.thresholds) else {
                bail!("--scores and --thresholds are required for the scores backend");
            };
            let source = ConfidenceMatrix::read_jsonl(crate::open(scores)?)?;
            Backend::Scores { thresholds: crate::read_thresholds(thresholds)?, source: Arc::new(source) }
        }
    })
}

pub fn profiles(config: &Config) -> Result<ProfileRegistry> {
    Ok(match &config.simulator.profiles_dir {
        Some(dir) => ProfileRegistry::with_dir(dir)?,
        None => ProfileRegistry::builtin(),
    })
}

pub fn store(config: &Config) -> Result<Arc<dyn EventStore>> {
    Ok(match &config.session.data_dir {
        Some(dir) => Arc::new(FileStore::open(dir)?),
        None => Arc::new(MemoryStore::default()),
    })
}
