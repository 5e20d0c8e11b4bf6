//! A loaded, queryable engine: providers, the current knowledge-base snapshot
//! and the router. Used by the CLI, the HTTP service and the C interface.

use std::collections::HashSet;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::model::{AnswerEnvelope, EmbeddingVector, FaqEntry};
use crate::providers::mock::{HashEmbedder, MockLlm, DEFAULT_SEED};
use crate::providers::remote::{Endpoint, RemoteEmbedder, RemoteGenerator};
use crate::providers::{
    Embedder, EmbedderSpec, Generator, GeneratorSet, GeneratorSpec, InFlightLimit, Limited, ProviderError,
};
use crate::router::{DirectSearch, KnowledgeBase, KnowledgeBaseError, Router, RouterError, SearchBackend};
use crate::store::{Store, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    KnowledgeBase(#[from] KnowledgeBaseError),
    #[error("embedding failed: {0}")]
    Embedding(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Remote,
    /// No endpoint configured; every call fails.
    Unconfigured,
}

/// Stand-in for a provider that has no endpoint.
struct Unavailable {
    spec: EmbedderSpec,
    reason: String,
}

impl Embedder for Unavailable {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed(&self, _text: &str) -> Result<EmbeddingVector, ProviderError> {
        Err(ProviderError::Unreachable(self.reason.clone()))
    }
}

impl Generator for Unavailable {
    fn name(&self) -> &str {
        "unavailable"
    }

    fn generate(&self, _prompt: &str, _spec: &GeneratorSpec) -> Result<String, ProviderError> {
        Err(ProviderError::Unreachable(self.reason.clone()))
    }
}

#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn Embedder>,
    pub generators: GeneratorSet,
    pub embedder_kind: ProviderKind,
    pub generator_kind: ProviderKind,
}

impl Providers {
    /// Deterministic offline providers sharing one in-flight cap.
    pub fn mock(config: &AppConfig) -> Self {
        let limit = InFlightLimit::new(config.providers.in_flight);
        let embedder = HashEmbedder::with_spec(config.embedder.clone(), DEFAULT_SEED);
        Self {
            embedder: Arc::new(Limited::new(embedder, limit.clone())),
            generators: GeneratorSet::new(Arc::new(Limited::new(MockLlm, limit))),
            embedder_kind: ProviderKind::Mock,
            generator_kind: ProviderKind::Mock,
        }
    }

    /// Mock providers when configured or forced, otherwise HTTP endpoints from
    /// the environment. A missing endpoint yields a provider whose calls fail.
    ///
    /// Builds blocking HTTP clients, so call it outside an async runtime.
    pub fn from_config(config: &AppConfig, force_mock: bool) -> Self {
        if force_mock || config.providers.mock {
            return Self::mock(config);
        }
        let limit = InFlightLimit::new(config.providers.in_flight);
        let endpoint = |prefix: &str| {
            Endpoint::from_env(prefix).map(|mut ep| {
                if std::env::var("URAG_PROVIDER_TIMEOUT_SECS").is_err() {
                    ep.timeout = config.providers.timeout();
                }
                ep.retries = config.providers.retries;
                ep
            })
        };
        let unavailable = |what: &str| Unavailable {
            spec: config.embedder.clone(),
            reason: format!("no {what} endpoint configured (set URAG_{}_BASE_URL)", what.to_uppercase()),
        };

        let (embedder, embedder_kind): (Arc<dyn Embedder>, _) =
            match endpoint("EMBED").map(|ep| RemoteEmbedder::new(ep, config.embedder.clone())) {
                Some(Ok(e)) => (Arc::new(Limited::new(e, limit.clone())), ProviderKind::Remote),
                Some(Err(e)) => {
                    tracing::warn!(error = %e, "embedding client could not be built");
                    (Arc::new(unavailable("embed")), ProviderKind::Unconfigured)
                }
                None => (Arc::new(unavailable("embed")), ProviderKind::Unconfigured),
            };
        let (generator, generator_kind): (Arc<dyn Generator>, _) = match endpoint("GEN").map(RemoteGenerator::new) {
            Some(Ok(g)) => (Arc::new(Limited::new(g, limit)), ProviderKind::Remote),
            Some(Err(e)) => {
                tracing::warn!(error = %e, "generation client could not be built");
                (Arc::new(unavailable("gen")), ProviderKind::Unconfigured)
            }
            None => (Arc::new(unavailable("gen")), ProviderKind::Unconfigured),
        };
        Self { embedder, generators: GeneratorSet::new(generator), embedder_kind, generator_kind }
    }

    pub fn available(&self) -> bool {
        self.embedder_kind != ProviderKind::Unconfigured
    }
}

/// Embeds entries that lack a question embedding.
pub fn embed_missing(entries: Vec<FaqEntry>, embedder: &dyn Embedder) -> Result<Vec<FaqEntry>, ProviderError> {
    let missing: Vec<&str> = entries
        .iter()
        .filter(|e| e.question_embedding.is_none())
        .map(|e| e.question.as_str())
        .collect();
    if missing.is_empty() {
        return Ok(entries);
    }
    let mut vectors = embedder.embed_batch(&missing)?.into_iter();
    Ok(entries
        .into_iter()
        .map(|e| match e.question_embedding {
            Some(_) => e,
            None => {
                let v = vectors.next().expect("one vector per missing embedding");
                e.with_embedding(v)
            }
        })
        .collect())
}

/// Builds a knowledge base from whatever the store holds: augmented chunks
/// if present, the enriched FAQ set if present, else the seed FAQ embedded
/// on the fly. Missing parts are simply empty.
pub fn load_knowledge_base(store: &Store, embedder: &dyn Embedder) -> Result<KnowledgeBase, EngineError> {
    let dim = embedder.dimension();
    let (documents, chunks) = if store.has_chunks() {
        let corpus = store.load_corpus(Some(dim))?;
        (corpus.documents, corpus.chunks)
    } else if store.documents_path().exists() {
        (store.load_documents()?, Vec::new())
    } else {
        (Vec::new(), Vec::new())
    };
    let faq = if store.has_faq() {
        let chunk_ids: HashSet<&str> = chunks.iter().map(|c| c.id.as_str()).collect();
        store.load_faq(Some(dim), Some(&chunk_ids))?
    } else if store.has_seed_faq() {
        embed_missing(store.load_seed_faq()?, embedder)?
    } else {
        Vec::new()
    };
    let titles: Vec<(String, String)> = documents.iter().map(|d| (d.id.to_string(), d.title.clone())).collect();
    let kb = KnowledgeBase::new(dim, faq, chunks, titles)?;
    tracing::info!(store = %store, faq = kb.faq_len(), chunks = kb.chunk_len(), "knowledge base loaded");
    Ok(kb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub faq_entries: usize,
    pub chunks: usize,
    pub documents: usize,
}

impl SnapshotSummary {
    pub fn of(kb: &KnowledgeBase) -> Self {
        Self { faq_entries: kb.faq_len(), chunks: kb.chunk_len(), documents: kb.titles().len() }
    }
}

pub struct Engine {
    config: AppConfig,
    store: Option<Store>,
    providers: Providers,
    router: Router,
    kb: RwLock<Arc<KnowledgeBase>>,
    search: Arc<dyn SearchBackend>,
}

impl Engine {
    /// Loads the store into a fresh engine.
    pub fn open(config: AppConfig, store: Store, providers: Providers) -> Result<Self, EngineError> {
        let kb = load_knowledge_base(&store, providers.embedder.as_ref())?;
        let mut engine = Self::with_knowledge_base(config, providers, kb);
        engine.store = Some(store);
        Ok(engine)
    }

    /// An engine over an in-memory knowledge base; `reload` keeps it as is.
    pub fn with_knowledge_base(config: AppConfig, providers: Providers, kb: KnowledgeBase) -> Self {
        let router = Router {
            config: config.router.clone(),
            embedder: providers.embedder.clone(),
            generators: providers.generators.clone(),
            spec: config.generator.clone(),
        };
        Self {
            config,
            store: None,
            providers,
            router,
            kb: RwLock::new(Arc::new(kb)),
            search: Arc::new(DirectSearch),
        }
    }

    /// Routes index searches through `backend` (e.g. a batching backend).
    pub fn with_search(mut self, backend: Arc<dyn SearchBackend>) -> Self {
        self.search = backend;
        self
    }

    pub fn config(&self) -> &AppConfig {
        &self.config
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn store(&self) -> Option<&Store> {
        self.store.as_ref()
    }

    pub fn snapshot(&self) -> Arc<KnowledgeBase> {
        self.kb.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn answer(&self, question: &str) -> Result<AnswerEnvelope, RouterError> {
        let kb = self.snapshot();
        self.router.answer_with(&kb, question, self.search.as_ref())
    }

    /// Re-reads the store and swaps the snapshot. Requests in flight finish
    /// on the snapshot they started with.
    pub fn reload(&self) -> Result<SnapshotSummary, EngineError> {
        let Some(store) = &self.store else {
            return Ok(SnapshotSummary::of(&self.snapshot()));
        };
        let kb = Arc::new(load_knowledge_base(store, self.providers.embedder.as_ref())?);
        let summary = SnapshotSummary::of(&kb);
        *self.kb.write().unwrap_or_else(|e| e.into_inner()) = kb;
        Ok(summary)
    }
}
