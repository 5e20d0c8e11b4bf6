//! Two-tier answering: curated FAQ first, retrieved document chunks plus one
//! generation second, unverified direct generation last.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Instant;

use crate::index::{IndexEntry, IndexError, Match, VectorIndex};
use crate::model::{AnswerEnvelope, Chunk, EmbeddingVector, FaqEntry, Purpose, RouterConfig, SourceMatch, Tier};
use crate::prompts::render;
use crate::providers::{embed_checked, Embedder, GeneratorSet, GeneratorSpec, ProviderError};

pub const FALLBACK_APOLOGY: &str = "Sorry, I cannot answer this question right now. Please try again later.";
const DISCLAIMER_GAP: &str = "\n\n";

#[derive(Debug, thiserror::Error)]
pub enum RouterError {
    #[error("question is empty")]
    EmptyQuery,
    #[error("query embedding failed: {0}")]
    Embedding(#[source] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("generation failed: {0}")]
    Generation(#[source] ProviderError),
    #[error("no retrieved passage fits in {0} prompt characters")]
    PromptBudget(usize),
}

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeBaseError {
    #[error("faq entry {0} has no question embedding")]
    MissingEmbedding(String),
    #[error("{kind} index: {source}")]
    Index { kind: &'static str, source: IndexError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndexKind {
    Faq,
    Document,
}

/// Immutable snapshot of everything a query can be answered from.
#[derive(Debug)]
pub struct KnowledgeBase {
    dim: usize,
    /// Entries without their embeddings; vectors live in `faq_index`.
    faq: HashMap<String, FaqEntry>,
    faq_index: VectorIndex,
    chunks: HashMap<String, Chunk>,
    doc_index: VectorIndex,
    titles: BTreeMap<String, String>,
}

impl KnowledgeBase {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            faq: HashMap::new(),
            faq_index: VectorIndex::empty(dim),
            chunks: HashMap::new(),
            doc_index: VectorIndex::empty(dim),
            titles: BTreeMap::new(),
        }
    }

    /// Builds both indexes. Every FAQ entry must carry a question embedding.
    pub fn new(
        dim: usize,
        faq: Vec<FaqEntry>,
        chunks: Vec<Chunk>,
        titles: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, KnowledgeBaseError> {
        let mut faq_vectors = Vec::with_capacity(faq.len());
        let mut faq_map = HashMap::with_capacity(faq.len());
        for mut e in faq {
            let v = e
                .question_embedding
                .take()
                .ok_or_else(|| KnowledgeBaseError::MissingEmbedding(e.id.to_string()))?;
            faq_vectors.push(IndexEntry { key: e.id.to_string(), vector: v });
            faq_map.insert(e.id.to_string(), e);
        }
        let faq_index =
            VectorIndex::build(dim, faq_vectors).map_err(|source| KnowledgeBaseError::Index { kind: "faq", source })?;
        let doc_index = VectorIndex::build(
            dim,
            chunks.iter().map(|c| IndexEntry { key: c.id.to_string(), vector: c.embedding.clone() }),
        )
        .map_err(|source| KnowledgeBaseError::Index { kind: "document", source })?;
        Ok(Self {
            dim,
            faq: faq_map,
            faq_index,
            chunks: chunks.into_iter().map(|c| (c.id.to_string(), c)).collect(),
            doc_index,
            titles: titles.into_iter().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn index(&self, kind: IndexKind) -> &VectorIndex {
        match kind {
            IndexKind::Faq => &self.faq_index,
            IndexKind::Document => &self.doc_index,
        }
    }

    pub fn faq_entry(&self, id: &str) -> Option<&FaqEntry> {
        self.faq.get(id)
    }

    pub fn chunk(&self, id: &str) -> Option<&Chunk> {
        self.chunks.get(id)
    }

    pub fn faq_len(&self) -> usize {
        self.faq.len()
    }

    pub fn chunk_len(&self) -> usize {
        self.chunks.len()
    }

    /// Document id to title.
    pub fn titles(&self) -> &BTreeMap<String, String> {
        &self.titles
    }
}

/// How index searches are executed; the service swaps in a batching backend.
pub trait SearchBackend: Send + Sync {
    fn search(
        &self,
        kb: &Arc<KnowledgeBase>,
        kind: IndexKind,
        query: &EmbeddingVector,
        threshold: f64,
        top_k: usize,
    ) -> Result<Vec<Match>, IndexError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DirectSearch;

impl SearchBackend for DirectSearch {
    fn search(
        &self,
        kb: &Arc<KnowledgeBase>,
        kind: IndexKind,
        query: &EmbeddingVector,
        threshold: f64,
        top_k: usize,
    ) -> Result<Vec<Match>, IndexError> {
        kb.index(kind).search(query.as_slice(), threshold, top_k)
    }
}

/// Fills the answer template with the query and numbered passages, in the
/// given order. When the result would exceed `max_chars`, the last passage is
/// shortened first, then dropped, then the one before it.
pub fn build_prompt(query: &str, passages: &[&str], template: &str, max_chars: usize) -> Result<String, RouterError> {
    if passages.is_empty() {
        return Err(RouterError::PromptBudget(max_chars));
    }
    let labelled: Vec<String> = passages.iter().enumerate().map(|(i, p)| format!("[{}] {}", i + 1, p)).collect();
    let overhead = render(template, &[("query", query), ("chunks", "")]).chars().count();
    let budget = max_chars.saturating_sub(overhead);
    // Passages are joined with a blank line.
    let mut lengths: Vec<usize> = labelled.iter().map(|p| p.chars().count()).collect();
    let total = |lengths: &[usize]| -> usize {
        let kept: Vec<&usize> = lengths.iter().filter(|&&l| l > 0).collect();
        kept.iter().copied().sum::<usize>() + 2 * kept.len().saturating_sub(1)
    };
    let mut i = lengths.len();
    while total(&lengths) > budget && i > 0 {
        i -= 1;
        let excess = total(&lengths) - budget;
        if excess >= lengths[i] {
            lengths[i] = 0;
        } else {
            lengths[i] -= excess;
        }
    }
    let kept: Vec<String> = labelled
        .iter()
        .zip(&lengths)
        .filter(|(_, &l)| l > 0)
        .map(|(p, &l)| p.chars().take(l).collect())
        .collect();
    if kept.is_empty() {
        return Err(RouterError::PromptBudget(max_chars));
    }
    Ok(render(template, &[("query", query), ("chunks", &kept.join("\n\n"))]))
}

fn with_disclaimer(text: &str, disclaimer: &str) -> String {
    format!("{}{DISCLAIMER_GAP}{disclaimer}", text.trim_end())
}

/// Answers questions against a [`KnowledgeBase`] snapshot.
pub struct Router {
    pub config: RouterConfig,
    pub embedder: Arc<dyn Embedder>,
    pub generators: GeneratorSet,
    pub spec: GeneratorSpec,
}

impl Router {
    pub fn answer(&self, kb: &Arc<KnowledgeBase>, query: &str) -> Result<AnswerEnvelope, RouterError> {
        self.answer_with(kb, query, &DirectSearch)
    }

    pub fn answer_with(
        &self,
        kb: &Arc<KnowledgeBase>,
        query: &str,
        search: &dyn SearchBackend,
    ) -> Result<AnswerEnvelope, RouterError> {
        let started = Instant::now();
        let query = query.trim();
        if query.is_empty() {
            return Err(RouterError::EmptyQuery);
        }
        let q = embed_checked(self.embedder.as_ref(), query, kb.dim()).map_err(RouterError::Embedding)?;
        let cfg = &self.config;

        let faq_hits = search.search(kb, IndexKind::Faq, &q, cfg.t_faq, cfg.k_faq)?;
        if let Some(best) = faq_hits.first().and_then(|m| kb.faq_entry(&m.key)) {
            let answer_text = best.answer.clone();
            let matches = faq_hits
                .iter()
                .map(|m| SourceMatch {
                    id: m.key.clone(),
                    score: m.score,
                    parent: kb.faq_entry(&m.key).map(|e| e.canonical_id.to_string()),
                })
                .collect();
            return Ok(self.envelope(query, answer_text, Tier::Faq, matches, None, started));
        }

        let doc_hits = search.search(kb, IndexKind::Document, &q, cfg.t_doc, cfg.k_doc)?;
        let retrieved: Vec<&Chunk> = doc_hits.iter().filter_map(|m| kb.chunk(&m.key)).collect();
        if !retrieved.is_empty() {
            let passages: Vec<&str> = retrieved.iter().map(|c| c.final_text.as_str()).collect();
            let generated = build_prompt(query, &passages, &cfg.prompt_template, cfg.max_prompt_chars).and_then(|p| {
                self.generators
                    .get(Purpose::Answer)
                    .generate(&p, &self.spec)
                    .map_err(RouterError::Generation)
            });
            match generated {
                Ok(text) => {
                    let matches = doc_hits
                        .iter()
                        .map(|m| SourceMatch {
                            id: m.key.clone(),
                            score: m.score,
                            parent: kb.chunk(&m.key).map(|c| c.parent_document_id.to_string()),
                        })
                        .collect();
                    return Ok(self.envelope(
                        query,
                        with_disclaimer(&text, &cfg.disclaimer_tier2),
                        Tier::Document,
                        matches,
                        Some(cfg.disclaimer_tier2.clone()),
                        started,
                    ));
                }
                Err(err) => tracing::warn!(%err, "document-tier generation failed, falling back"),
            }
        }

        let text = match self.generators.get(Purpose::Fallback).generate(query, &self.spec) {
            Ok(t) => t,
            Err(err) => {
                tracing::warn!(%err, "fallback generation failed");
                FALLBACK_APOLOGY.to_owned()
            }
        };
        Ok(self.envelope(
            query,
            with_disclaimer(&text, &cfg.disclaimer_fallback),
            Tier::Fallback,
            Vec::new(),
            Some(cfg.disclaimer_fallback.clone()),
            started,
        ))
    }

    fn envelope(
        &self,
        query: &str,
        answer_text: String,
        tier: Tier,
        matches: Vec<SourceMatch>,
        disclaimer: Option<String>,
        started: Instant,
    ) -> AnswerEnvelope {
        AnswerEnvelope {
            query: query.to_owned(),
            answer_text,
            tier,
            matches,
            disclaimer_applied: disclaimer,
            latency_ms: started.elapsed().as_secs_f64() * 1000.0,
        }
    }
}
