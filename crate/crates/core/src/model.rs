//! Shared domain types: documents, augmented chunks, FAQ entries, embeddings,
//! router configuration and the answer envelope returned to callers.
//!
//! Constructors enforce the per-record invariants. Deserialized records are
//! checked with `validate`, and collection-level invariants (parent links,
//! canonical answers) with [`validate_corpus`] and [`validate_faq_set`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Separator placed between a chunk's summary sentence and its rewritten body.
pub const SUMMARY_SEPARATOR: &str = "\n";

pub const DEFAULT_DISCLAIMER_TIER2: &str =
    "This answer was generated from retrieved documents and may contain errors.";
pub const DEFAULT_DISCLAIMER_FALLBACK: &str =
    "No relevant information was found; this answer is unverified.";

pub const DEFAULT_PROMPT_TEMPLATE: &str = "Answer the question using only the reference passages below.\n\nPASSAGES:\n{chunks}\n\nQUESTION: {query}\nANSWER:";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("invalid {kind}: {}", .violations.join("; "))]
    Invalid {
        kind: &'static str,
        violations: Vec<String>,
    },
}

impl ModelError {
    fn check(kind: &'static str, violations: Vec<String>) -> Result<(), ModelError> {
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid { kind, violations })
        }
    }
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(
    /// Identifier of an original corpus document.
    DocumentId
);
id_type!(
    /// Identifier of an augmented chunk.
    ChunkId
);
id_type!(
    /// Identifier of an FAQ entry.
    FaqId
);

/// Derives a 26-character, ULID-formatted identifier from content.
///
/// Identical parts always produce the same id, so re-running a pipeline over
/// unchanged input reproduces the same identifiers.
pub fn content_id(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 16];
    bytes.copy_from_slice(&digest[..16]);
    ulid::Ulid::from(u128::from_be_bytes(bytes)).to_string()
}

/// Short hex digest used in provider call logs.
pub fn short_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// An m-dimensional embedding with finite entries.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, ModelError> {
        let mut violations = Vec::new();
        if values.is_empty() {
            violations.push("embedding has no dimensions".to_owned());
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            violations.push(format!("embedding entry {pos} is not finite"));
        }
        ModelError::check("embedding", violations)?;
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = ModelError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl Serialize for EmbeddingVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(serializer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: DocumentId,
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_uri: Option<String>,
    pub ingested_at: DateTime<Utc>,
    /// Fields written by other tools; kept so that a load/save cycle is lossless.
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

impl Document {
    pub fn new(
        id: impl Into<DocumentId>,
        title: impl Into<String>,
        body: impl Into<String>,
        source_uri: Option<String>,
        ingested_at: DateTime<Utc>,
    ) -> Result<Self, ModelError> {
        let doc = Self {
            id: id.into(),
            title: title.into(),
            body: body.into(),
            source_uri,
            ingested_at,
            extra: Map::new(),
        };
        ModelError::check("document", doc.violations())?;
        Ok(doc)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.as_str().trim().is_empty() {
            out.push("document id is empty".to_owned());
        }
        if self.body.trim().is_empty() {
            out.push(format!("document {} has an empty body", self.id));
        }
        out
    }
}

/// A retrievable segment produced from one document: the raw semantic chunk,
/// its context-guided rewrite, a one-sentence summary and the final text
/// (summary, separator, rewrite) that is embedded and searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: ChunkId,
    pub parent_document_id: DocumentId,
    pub ordinal: u32,
    pub raw_text: String,
    pub rewritten_text: String,
    pub summary: String,
    pub final_text: String,
    pub embedding: EmbeddingVector,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

impl Chunk {
    /// Builds a chunk, deriving `final_text` and a content-hash id.
    pub fn assemble(
        parent_document_id: DocumentId,
        ordinal: u32,
        raw_text: String,
        rewritten_text: String,
        summary: String,
        embedding: EmbeddingVector,
    ) -> Result<Self, ModelError> {
        let final_text = compose_final_text(&summary, &rewritten_text);
        let id = ChunkId::new(content_id(&[
            parent_document_id.as_str(),
            &ordinal.to_string(),
            &final_text,
        ]));
        let chunk = Self {
            id,
            parent_document_id,
            ordinal,
            raw_text,
            rewritten_text,
            summary,
            final_text,
            embedding,
            extra: Map::new(),
        };
        ModelError::check("chunk", chunk.violations())?;
        Ok(chunk)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.as_str().is_empty() {
            out.push("chunk id is empty".to_owned());
        }
        if self.summary.contains('\n') {
            out.push(format!("chunk {} summary spans several lines", self.id));
        }
        if self.final_text != compose_final_text(&self.summary, &self.rewritten_text) {
            out.push(format!(
                "chunk {} final_text is not summary + separator + rewritten_text",
                self.id
            ));
        }
        if self.rewritten_text.trim().is_empty() {
            out.push(format!("chunk {} has an empty rewritten text", self.id));
        }
        out
    }
}

pub fn compose_final_text(summary: &str, rewritten: &str) -> String {
    let mut s = String::with_capacity(summary.len() + SUMMARY_SEPARATOR.len() + rewritten.len());
    s.push_str(summary);
    s.push_str(SUMMARY_SEPARATOR);
    s.push_str(rewritten);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaqOrigin {
    Seed,
    ExpandedFromSeed,
    GeneratedFromChunk,
    Paraphrase,
}

impl FaqOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            FaqOrigin::Seed => "seed",
            FaqOrigin::ExpandedFromSeed => "expanded_from_seed",
            FaqOrigin::GeneratedFromChunk => "generated_from_chunk",
            FaqOrigin::Paraphrase => "paraphrase",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaqEntry {
    pub id: FaqId,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_embedding: Option<EmbeddingVector>,
    pub origin: FaqOrigin,
    pub canonical_id: FaqId,
    /// Chunk id or seed FAQ id this entry was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_ref: Option<String>,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

impl FaqEntry {
    /// A non-paraphrase entry; it is its own canonical entry.
    pub fn canonical(
        question: impl Into<String>,
        answer: impl Into<String>,
        origin: FaqOrigin,
        source_ref: Option<String>,
    ) -> Result<Self, ModelError> {
        let question = question.into();
        let answer = answer.into();
        let id = FaqId::new(content_id(&[
            origin.as_str(),
            &question,
            &answer,
            source_ref.as_deref().unwrap_or(""),
        ]));
        Self::with_id(id, question, answer, origin, source_ref)
    }

    /// A non-paraphrase entry with a caller-chosen id (seed files may carry ids).
    pub fn with_id(
        id: FaqId,
        question: String,
        answer: String,
        origin: FaqOrigin,
        source_ref: Option<String>,
    ) -> Result<Self, ModelError> {
        if origin == FaqOrigin::Paraphrase {
            return Err(ModelError::Invalid {
                kind: "faq entry",
                violations: vec!["paraphrases must be built with FaqEntry::paraphrase_of".into()],
            });
        }
        let entry = Self {
            canonical_id: id.clone(),
            id,
            question,
            answer,
            question_embedding: None,
            origin,
            source_ref,
            extra: Map::new(),
        };
        ModelError::check("faq entry", entry.violations())?;
        Ok(entry)
    }

    /// A paraphrase of `canonical`: same answer bytes, new question text.
    pub fn paraphrase_of(canonical: &FaqEntry, question: impl Into<String>) -> Result<Self, ModelError> {
        if canonical.is_paraphrase() {
            return Err(ModelError::Invalid {
                kind: "faq entry",
                violations: vec![format!(
                    "entry {} is itself a paraphrase and cannot be a canonical entry",
                    canonical.id
                )],
            });
        }
        let question = question.into();
        let id = FaqId::new(content_id(&["paraphrase", canonical.id.as_str(), &question]));
        let entry = Self {
            id,
            question,
            answer: canonical.answer.clone(),
            question_embedding: None,
            origin: FaqOrigin::Paraphrase,
            canonical_id: canonical.id.clone(),
            source_ref: canonical
                .source_ref
                .clone()
                .or_else(|| Some(canonical.id.to_string())),
            extra: Map::new(),
        };
        ModelError::check("faq entry", entry.violations())?;
        Ok(entry)
    }

    pub fn is_paraphrase(&self) -> bool {
        self.origin == FaqOrigin::Paraphrase
    }

    pub fn with_embedding(mut self, embedding: EmbeddingVector) -> Self {
        self.question_embedding = Some(embedding);
        self
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.as_str().is_empty() {
            out.push("faq entry id is empty".to_owned());
        }
        if self.question.trim().is_empty() {
            out.push(format!("faq entry {} has an empty question", self.id));
        }
        match self.origin {
            FaqOrigin::Paraphrase if self.canonical_id == self.id => {
                out.push(format!("paraphrase {} names itself as canonical", self.id))
            }
            FaqOrigin::Paraphrase => {}
            _ if self.canonical_id != self.id => out.push(format!(
                "non-paraphrase entry {} points at canonical {}",
                self.id, self.canonical_id
            )),
            _ => {}
        }
        out
    }
}

/// Lowercases, collapses whitespace and strips trailing terminal punctuation.
/// Two questions with the same normalized form are duplicates.
pub fn normalize_question(question: &str) -> String {
    let collapsed = question
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    collapsed
        .trim_end_matches(|c: char| {
            c.is_whitespace() || matches!(c, '.' | '?' | '!' | '…' | '。' | '？' | '！')
        })
        .to_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Faq,
    Document,
    Fallback,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Faq, Tier::Document, Tier::Fallback];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Faq => "faq",
            Tier::Document => "document",
            Tier::Fallback => "fallback",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMatch {
    pub id: String,
    pub score: f64,
    /// Parent document for chunks, canonical entry for FAQ matches.
    #[serde(default)]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerEnvelope {
    pub query: String,
    pub answer_text: String,
    pub tier: Tier,
    pub matches: Vec<SourceMatch>,
    pub disclaimer_applied: Option<String>,
    pub latency_ms: f64,
}

impl AnswerEnvelope {
    pub fn violations(&self, config: &RouterConfig) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.latency_ms >= 0.0) {
            out.push("latency is negative".to_owned());
        }
        match self.tier {
            Tier::Faq => {
                if self.disclaimer_applied.is_some() {
                    out.push("faq answer carries a disclaimer".to_owned());
                }
                if self.matches.is_empty() {
                    out.push("faq answer has no matches".to_owned());
                }
            }
            Tier::Document => {
                if self.disclaimer_applied.as_deref() != Some(config.disclaimer_tier2.as_str()) {
                    out.push("document answer lacks the retrieval disclaimer".to_owned());
                }
                if self.matches.is_empty() {
                    out.push("document answer has no matches".to_owned());
                }
                if !self.answer_text.ends_with(config.disclaimer_tier2.as_str()) {
                    out.push("document answer does not end with the retrieval disclaimer".to_owned());
                }
            }
            Tier::Fallback => {
                if self.disclaimer_applied.as_deref() != Some(config.disclaimer_fallback.as_str()) {
                    out.push("fallback answer lacks the fallback disclaimer".to_owned());
                }
                if !self.matches.is_empty() {
                    out.push("fallback answer lists matches".to_owned());
                }
                if !self.answer_text.ends_with(config.disclaimer_fallback.as_str()) {
                    out.push("fallback answer does not end with the fallback disclaimer".to_owned());
                }
            }
        }
        out
    }
}

/// Routing thresholds, fan-out and disclaimer texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    pub t_faq: f64,
    pub t_doc: f64,
    pub k_faq: usize,
    pub k_doc: usize,
    pub disclaimer_tier2: String,
    pub disclaimer_fallback: String,
    /// Tier-2 prompt; `{query}` and `{chunks}` are substituted.
    pub prompt_template: String,
    /// Upper bound on the rendered Tier-2 prompt, in characters.
    pub max_prompt_chars: usize,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            t_faq: 0.9,
            t_doc: 0.8,
            k_faq: 20,
            k_doc: 2,
            disclaimer_tier2: DEFAULT_DISCLAIMER_TIER2.to_owned(),
            disclaimer_fallback: DEFAULT_DISCLAIMER_FALLBACK.to_owned(),
            prompt_template: DEFAULT_PROMPT_TEMPLATE.to_owned(),
            max_prompt_chars: 4000,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.t_faq) {
            v.push(format!("t_faq {} outside [0, 1]", self.t_faq));
        }
        if !(0.0..=1.0).contains(&self.t_doc) {
            v.push(format!("t_doc {} outside [0, 1]", self.t_doc));
        }
        if self.k_faq == 0 {
            v.push("k_faq must be at least 1".to_owned());
        }
        if self.k_doc == 0 {
            v.push("k_doc must be at least 1".to_owned());
        }
        if self.disclaimer_tier2.trim().is_empty() {
            v.push("tier-2 disclaimer is empty".to_owned());
        }
        if self.disclaimer_fallback.trim().is_empty() {
            v.push("fallback disclaimer is empty".to_owned());
        }
        if !self.prompt_template.contains("{query}") || !self.prompt_template.contains("{chunks}") {
            v.push("prompt template needs {query} and {chunks} slots".to_owned());
        }
        ModelError::check("router config", v)
    }
}

/// What a generator call was for. Pipelines log it and providers may be
/// configured per purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Context,
    Rewrite,
    Condense,
    ExpandFaq,
    ExtractQa,
    Paraphrase,
    Answer,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCall {
    pub purpose: Purpose,
    pub prompt_hash: String,
    /// `None` when the call failed.
    pub response_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub document_id: DocumentId,
    pub general_context: String,
    pub chunk_count: usize,
    pub provider_call_log: Vec<ProviderCall>,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

/// A collection-level invariant that failed; `id` names the offending record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub id: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.id, self.message)
    }
}

/// Checks document/chunk uniqueness, parent links, (parent, ordinal)
/// uniqueness and per-record chunk counts.
pub fn validate_corpus(
    documents: &[Document],
    chunks: &[Chunk],
    records: &[AugmentationRecord],
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut doc_ids = HashSet::new();
    for doc in documents {
        for message in doc.violations() {
            out.push(Violation { id: doc.id.to_string(), message });
        }
        if !doc_ids.insert(doc.id.as_str()) {
            out.push(Violation { id: doc.id.to_string(), message: "duplicate document id".into() });
        }
    }
    let mut chunk_ids = HashSet::new();
    let mut positions = HashSet::new();
    let mut per_parent: HashMap<&str, usize> = HashMap::new();
    for chunk in chunks {
        let id = chunk.id.to_string();
        for message in chunk.violations() {
            out.push(Violation { id: id.clone(), message });
        }
        if !chunk_ids.insert(chunk.id.as_str()) {
            out.push(Violation { id: id.clone(), message: "duplicate chunk id".into() });
        }
        if !doc_ids.contains(chunk.parent_document_id.as_str()) {
            out.push(Violation {
                id: id.clone(),
                message: format!("parent document {} does not exist", chunk.parent_document_id),
            });
        }
        if !positions.insert((chunk.parent_document_id.as_str(), chunk.ordinal)) {
            out.push(Violation {
                id,
                message: format!(
                    "ordinal {} repeated within document {}",
                    chunk.ordinal, chunk.parent_document_id
                ),
            });
        }
        *per_parent.entry(chunk.parent_document_id.as_str()).or_default() += 1;
    }
    for record in records {
        let have = per_parent.get(record.document_id.as_str()).copied().unwrap_or(0);
        if have != record.chunk_count {
            out.push(Violation {
                id: record.document_id.to_string(),
                message: format!(
                    "augmentation record claims {} chunks but {} exist",
                    record.chunk_count, have
                ),
            });
        }
    }
    out
}

/// Checks the FAQ set: unique ids, canonical links of depth one, byte-identical
/// paraphrase answers and, when `chunk_ids` is given, that every `source_ref`
/// resolves to a chunk or an entry in the set.
pub fn validate_faq_set(entries: &[FaqEntry], chunk_ids: Option<&HashSet<&str>>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut by_id: BTreeMap<&str, &FaqEntry> = BTreeMap::new();
    for entry in entries {
        for message in entry.violations() {
            out.push(Violation { id: entry.id.to_string(), message });
        }
        if by_id.insert(entry.id.as_str(), entry).is_some() {
            out.push(Violation { id: entry.id.to_string(), message: "duplicate faq id".into() });
        }
    }
    for entry in entries.iter().filter(|e| e.is_paraphrase()) {
        match by_id.get(entry.canonical_id.as_str()) {
            None => out.push(Violation {
                id: entry.id.to_string(),
                message: format!("canonical entry {} does not exist", entry.canonical_id),
            }),
            Some(canonical) if canonical.is_paraphrase() => out.push(Violation {
                id: entry.id.to_string(),
                message: format!("canonical entry {} is itself a paraphrase", canonical.id),
            }),
            Some(canonical) if canonical.answer.as_bytes() != entry.answer.as_bytes() => {
                out.push(Violation {
                    id: entry.id.to_string(),
                    message: format!("answer differs from canonical entry {}", canonical.id),
                })
            }
            Some(_) => {}
        }
    }
    if let Some(chunk_ids) = chunk_ids {
        for entry in entries {
            if let Some(source) = entry.source_ref.as_deref() {
                if !chunk_ids.contains(source) && !by_id.contains_key(source) {
                    out.push(Violation {
                        id: entry.id.to_string(),
                        message: format!("source {source} does not resolve"),
                    });
                }
            } else if entry.origin != FaqOrigin::Seed {
                out.push(Violation {
                    id: entry.id.to_string(),
                    message: "derived entry has no source reference".into(),
                });
            }
        }
    }
    out
}
