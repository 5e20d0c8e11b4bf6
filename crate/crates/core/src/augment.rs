//! Document augmentation: semantic chunks are rewritten against the
//! document's general context, condensed into a one-sentence summary and
//! embedded as `summary + "\n" + rewrite`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chunker::{chunk_text, split_sentences, ChunkError, ChunkerParams};
use crate::model::{short_hash, AugmentationRecord, Chunk, Document, ProviderCall, Purpose};
use crate::prompts::PromptTemplates;
use crate::providers::{
    embed_checked, parse_structured, Embedder, Generator, GeneratorSet, GeneratorSpec, ProviderError, Record,
    SchemaHint,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub chunker: ChunkerParams,
    pub max_summary_chars: usize,
    pub templates: PromptTemplates,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            chunker: ChunkerParams::default(),
            max_summary_chars: 300,
            templates: PromptTemplates::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("document {id}: {source}")]
    Chunking { id: String, source: ChunkError },
    #[error("document {0} produced no chunks")]
    NoChunks(String),
    #[error("{} of {total} documents failed: {}", .failures.len(), .failures.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Corpus { total: usize, failures: Vec<AugmentError> },
}

/// Everything the augmentation steps need, borrowed for one run.
pub struct Augmenter<'a> {
    pub generators: &'a GeneratorSet,
    pub embedder: &'a dyn Embedder,
    pub spec: &'a GeneratorSpec,
    pub config: &'a AugmentConfig,
}

/// Result of augmenting a set of documents, in input order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentedCorpus {
    pub chunks: Vec<Chunk>,
    pub records: Vec<AugmentationRecord>,
}

fn logged_call(
    generator: &dyn Generator,
    purpose: Purpose,
    prompt: &str,
    spec: &GeneratorSpec,
    log: &mut Vec<ProviderCall>,
) -> Result<String, ProviderError> {
    let result = generator.generate(prompt, spec);
    log.push(ProviderCall {
        purpose,
        prompt_hash: short_hash(prompt),
        response_hash: result.as_ref().ok().map(|r| short_hash(r)),
    });
    result
}

fn single_text(response: Result<String, ProviderError>, hint: SchemaHint) -> Result<String, ProviderError> {
    match parse_structured(&response?, hint)?.into_iter().next() {
        Some(Record::Text(t)) if !t.trim().is_empty() => Ok(t),
        _ => Err(ProviderError::InvalidResponse("empty output".into())),
    }
}

/// Collapses whitespace, keeps the first sentence and caps its length at a
/// word boundary.
pub fn one_sentence(text: &str, max_chars: usize) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let first = split_sentences(&flat).first().map(|s| s.text.to_owned()).unwrap_or_default();
    if first.chars().count() <= max_chars {
        return first;
    }
    let cut: String = first.chars().take(max_chars).collect();
    match cut.rfind(' ') {
        Some(pos) if pos > 0 => cut[..pos].trim_end().to_owned(),
        _ => cut,
    }
}

impl Augmenter<'_> {
    /// General context of a document; falls back to the title plus the first
    /// two sentences of the body.
    pub fn extract_context(&self, doc: &Document, log: &mut Vec<ProviderCall>) -> String {
        let prompt = self.config.templates.context(&doc.title, &doc.body);
        let generator = self.generators.get(Purpose::Context);
        match single_text(logged_call(generator, Purpose::Context, &prompt, self.spec, log), SchemaHint::Context) {
            Ok(text) => text,
            Err(err) => {
                tracing::warn!(document = %doc.id, %err, "context extraction failed, using title and lead");
                let lead: Vec<&str> = split_sentences(&doc.body).iter().take(2).map(|s| s.text).collect();
                let title = doc.title.trim();
                if title.is_empty() {
                    lead.join(" ")
                } else {
                    format!("{title}. {}", lead.join(" "))
                }
            }
        }
    }

    /// Context-guided rewrite; the raw chunk is kept when generation fails.
    pub fn rewrite_chunk(&self, raw: &str, context: &str, log: &mut Vec<ProviderCall>) -> String {
        let prompt = self.config.templates.rewrite(context, raw);
        let generator = self.generators.get(Purpose::Rewrite);
        match single_text(logged_call(generator, Purpose::Rewrite, &prompt, self.spec, log), SchemaHint::Rewrite) {
            Ok(text) => text,
            Err(err) => {
                tracing::warn!(%err, "chunk rewrite failed, keeping raw text");
                raw.trim().to_owned()
            }
        }
    }

    /// One-sentence summary; the first sentence of `rewritten` when
    /// generation fails.
    pub fn condense(&self, rewritten: &str, log: &mut Vec<ProviderCall>) -> String {
        let max = self.config.max_summary_chars;
        let prompt = self.config.templates.condense(rewritten);
        let generator = self.generators.get(Purpose::Condense);
        let summary = match single_text(logged_call(generator, Purpose::Condense, &prompt, self.spec, log), SchemaHint::Summary) {
            Ok(text) => one_sentence(&text, max),
            Err(err) => {
                tracing::warn!(%err, "condense failed, using first sentence");
                String::new()
            }
        };
        if summary.is_empty() {
            one_sentence(rewritten, max)
        } else {
            summary
        }
    }

    pub fn augment_document(&self, doc: &Document) -> Result<(Vec<Chunk>, AugmentationRecord), AugmentError> {
        let raw_chunks = chunk_text(&doc.body, self.embedder, &self.config.chunker).map_err(|source| {
            AugmentError::Chunking { id: doc.id.to_string(), source }
        })?;
        let mut log = Vec::new();
        let context = self.extract_context(doc, &mut log);
        let dim = self.embedder.dimension();

        let mut chunks = Vec::with_capacity(raw_chunks.len());
        for raw in &raw_chunks {
            let rewritten = self.rewrite_chunk(&raw.text, &context, &mut log);
            let summary = self.condense(&rewritten, &mut log);
            let final_text = crate::model::compose_final_text(&summary, &rewritten);
            let embedding = match embed_checked(self.embedder, &final_text, dim) {
                Ok(e) => e,
                Err(err) => {
                    tracing::warn!(document = %doc.id, sentences = ?raw.sentences, %err, "skipping chunk: embedding failed");
                    continue;
                }
            };
            let ordinal = chunks.len() as u32;
            match Chunk::assemble(doc.id.clone(), ordinal, raw.text.clone(), rewritten, summary, embedding) {
                Ok(c) => chunks.push(c),
                Err(err) => tracing::warn!(document = %doc.id, %err, "skipping invalid chunk"),
            }
        }
        if chunks.is_empty() {
            return Err(AugmentError::NoChunks(doc.id.to_string()));
        }
        let record = AugmentationRecord {
            document_id: doc.id.clone(),
            general_context: context,
            chunk_count: chunks.len(),
            provider_call_log: log,
            extra: Default::default(),
        };
        Ok((chunks, record))
    }

    /// Augments documents in parallel; output keeps input order. Any failed
    /// document fails the whole run so that records and documents stay 1:1.
    pub fn augment_corpus(&self, docs: &[Document]) -> Result<AugmentedCorpus, AugmentError> {
        let results: Vec<_> = docs.par_iter().map(|d| self.augment_document(d)).collect();
        let mut out = AugmentedCorpus::default();
        let mut failures = Vec::new();
        for r in results {
            match r {
                Ok((chunks, record)) => {
                    out.chunks.extend(chunks);
                    out.records.push(record);
                }
                Err(e) => failures.push(e),
            }
        }
        if !failures.is_empty() {
            return Err(AugmentError::Corpus { total: docs.len(), failures });
        }
        tracing::info!(documents = docs.len(), chunks = out.chunks.len(), "corpus augmented");
        Ok(out)
    }
}
