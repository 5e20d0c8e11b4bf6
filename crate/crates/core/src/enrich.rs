//! FAQ enrichment: expand the seed FAQ, extract Q-A pairs from every
//! augmented chunk and paraphrase each resulting entry.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{normalize_question, Chunk, FaqEntry, FaqOrigin, Purpose};
use crate::prompts::PromptTemplates;
use crate::providers::{generate_structured, Embedder, GeneratorSet, GeneratorSpec, ProviderError, Record, SchemaHint};

pub const DEFAULT_N_VARIANTS: usize = 19;
const EMBED_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnrichConfig {
    /// Paraphrases requested per canonical entry.
    pub n_variants: usize,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        Self { n_variants: DEFAULT_N_VARIANTS }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EnrichError {
    #[error("embedding FAQ questions failed: {0}")]
    Embedding(#[from] ProviderError),
}

/// Entry counts at each stage of one enrichment run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EnrichStats {
    pub seed: usize,
    pub expanded: usize,
    pub from_chunks: usize,
    pub paraphrases: usize,
    pub duplicates_dropped: usize,
    pub total: usize,
}

pub struct Enricher<'a> {
    pub generators: &'a GeneratorSet,
    pub embedder: &'a dyn Embedder,
    pub spec: &'a GeneratorSpec,
    pub templates: &'a PromptTemplates,
}

fn qa_entries(records: Vec<Record>, origin: FaqOrigin, source_ref: &str) -> Vec<FaqEntry> {
    records
        .into_iter()
        .filter_map(|r| match r {
            Record::QaPair { question, answer } => {
                FaqEntry::canonical(question.trim(), answer, origin, Some(source_ref.to_owned()))
                    .map_err(|e| tracing::warn!(%e, source_ref, "dropping invalid generated pair"))
                    .ok()
            }
            Record::Text(_) => None,
        })
        .collect()
}

/// Keeps the first entry for every normalized question.
fn dedup_into(entries: impl IntoIterator<Item = FaqEntry>, seen: &mut HashSet<String>, out: &mut Vec<FaqEntry>) -> usize {
    let mut dropped = 0;
    for e in entries {
        if seen.insert(normalize_question(&e.question)) {
            out.push(e);
        } else {
            dropped += 1;
        }
    }
    dropped
}

impl Enricher<'_> {
    /// The seed followed by new pairs generated from each seed pair.
    pub fn expand_initial(&self, seed: &[FaqEntry]) -> Vec<FaqEntry> {
        let generator = self.generators.get(Purpose::ExpandFaq);
        let expansions: Vec<Vec<FaqEntry>> = seed
            .par_iter()
            .map(|s| {
                let prompt = self.templates.expand_faq(&s.question, &s.answer);
                match generate_structured(generator, &prompt, SchemaHint::QaPairs, self.spec) {
                    Ok(records) => qa_entries(records, FaqOrigin::ExpandedFromSeed, s.id.as_str()),
                    Err(err) => {
                        tracing::warn!(seed = %s.id, %err, "seed expansion failed");
                        Vec::new()
                    }
                }
            })
            .collect();
        seed.iter().cloned().chain(expansions.into_iter().flatten()).collect()
    }

    /// Q-A pairs answered by one chunk. Unparseable output yields nothing.
    pub fn generate_faq_from_chunk(&self, chunk: &Chunk) -> Vec<FaqEntry> {
        let prompt = self.templates.extract_qa(&chunk.final_text);
        match generate_structured(self.generators.get(Purpose::ExtractQa), &prompt, SchemaHint::QaPairs, self.spec) {
            Ok(records) => qa_entries(records, FaqOrigin::GeneratedFromChunk, chunk.id.as_str()),
            Err(err) => {
                tracing::warn!(chunk = %chunk.id, %err, "no Q-A pairs extracted");
                Vec::new()
            }
        }
    }

    /// Up to `n_variants` paraphrases of a canonical entry, none of which
    /// repeats the original question or each other after normalization.
    pub fn paraphrase_entry(&self, entry: &FaqEntry, n_variants: usize) -> Vec<FaqEntry> {
        if n_variants == 0 {
            return Vec::new();
        }
        if entry.is_paraphrase() {
            tracing::warn!(entry = %entry.id, "refusing to paraphrase a paraphrase");
            return Vec::new();
        }
        let prompt = self.templates.paraphrase(&entry.question, n_variants);
        let records = match generate_structured(self.generators.get(Purpose::Paraphrase), &prompt, SchemaHint::Paraphrases, self.spec) {
            Ok(r) => r,
            Err(err) => {
                tracing::warn!(entry = %entry.id, %err, "paraphrasing failed");
                return Vec::new();
            }
        };
        let mut seen = HashSet::from([normalize_question(&entry.question)]);
        records
            .into_iter()
            .filter_map(|r| match r {
                Record::Text(q) => Some(q),
                Record::QaPair { .. } => None,
            })
            .filter(|q| !q.trim().is_empty() && seen.insert(normalize_question(q)))
            .take(n_variants)
            .filter_map(|q| FaqEntry::paraphrase_of(entry, q.trim()).ok())
            .collect()
    }

    /// Full enrichment. Paraphrases are generated for the deduplicated
    /// pre-paraphrase set only, and every returned entry carries a question
    /// embedding.
    pub fn enrich(&self, chunks: &[Chunk], seed: &[FaqEntry], n_variants: usize) -> Result<(Vec<FaqEntry>, EnrichStats), EnrichError> {
        let expanded = self.expand_initial(seed);
        let from_chunks: Vec<FaqEntry> = chunks
            .par_iter()
            .map(|c| self.generate_faq_from_chunk(c))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        let mut stats = EnrichStats {
            seed: seed.len(),
            expanded: expanded.len() - seed.len(),
            from_chunks: from_chunks.len(),
            ..Default::default()
        };

        let mut seen = HashSet::new();
        let mut base = Vec::with_capacity(expanded.len() + from_chunks.len());
        stats.duplicates_dropped += dedup_into(expanded.into_iter().chain(from_chunks), &mut seen, &mut base);

        let paraphrases: Vec<Vec<FaqEntry>> = base
            .par_iter()
            .filter(|e| !e.is_paraphrase())
            .map(|e| self.paraphrase_entry(e, n_variants))
            .collect();
        stats.paraphrases = paraphrases.iter().map(Vec::len).sum();
        let mut all = base;
        stats.duplicates_dropped += dedup_into(paraphrases.into_iter().flatten(), &mut seen, &mut all);

        let dim = self.embedder.dimension();
        let mut embedded = Vec::with_capacity(all.len());
        for batch in all.chunks(EMBED_BATCH) {
            let questions: Vec<&str> = batch.iter().map(|e| e.question.as_str()).collect();
            let vectors = self.embedder.embed_batch(&questions)?;
            for (entry, v) in batch.iter().zip(vectors) {
                if v.dim() != dim {
                    return Err(ProviderError::DimensionMismatch { expected: dim, got: v.dim() }.into());
                }
                embedded.push(entry.clone().with_embedding(v));
            }
        }
        stats.total = embedded.len();
        tracing::info!(?stats, "faq enriched");
        Ok((embedded, stats))
    }
}
