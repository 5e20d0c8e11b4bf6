//! Offline preparation steps run by the CLI: ingest, augment, enrich, tune.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentError, Augmenter};
use crate::config::{AppConfig, TuningConfig};
use crate::engine::Providers;
use crate::enrich::{EnrichError, EnrichStats, Enricher};
use crate::eval::{sweep_doc_threshold, sweep_faq_threshold, EvalError, LabeledQuery, SweepOutcome};
use crate::index::{IndexEntry, IndexError, VectorIndex};
use crate::model::{content_id, Chunk, Document, FaqEntry, FaqId, FaqOrigin, ModelError};
use crate::providers::{Embedder, ProviderError};
use crate::store::{read_json_lines, Corpus, Store, StoreError};

const EMBED_BATCH: usize = 256;
const DOCUMENT_EXTENSIONS: [&str; 3] = ["md", "txt", "markdown"];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Enrich(#[from] EnrichError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("embedding failed: {0}")]
    Embedding(#[from] ProviderError),
}

/// One line of a seed FAQ input file.
#[derive(Debug, Clone, Deserialize)]
pub struct SeedLine {
    #[serde(default)]
    pub id: Option<String>,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub documents: usize,
    pub seed_faq: usize,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io { path: dir.to_owned(), source };
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| DOCUMENT_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        {
            out.push(path);
        }
    }
    Ok(())
}

/// Splits a leading `# Title` line off the text; otherwise the fallback title is used.
fn title_and_body(text: &str, fallback: &str) -> (String, String) {
    let trimmed = text.trim_start_matches('\u{feff}').trim_start();
    if let Some(rest) = trimmed.strip_prefix("# ") {
        let (title, body) = rest.split_once('\n').unwrap_or((rest, ""));
        (title.trim().to_owned(), body.trim().to_owned())
    } else {
        (fallback.to_owned(), trimmed.trim_end().to_owned())
    }
}

/// Reads every `.md`/`.txt` file under `dir`, sorted by relative path.
pub fn read_documents(dir: &Path) -> Result<Vec<Document>, PipelineError> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut docs = Vec::with_capacity(files.len());
    for path in files {
        let io = |source| PipelineError::Io { path: path.clone(), source };
        let text = fs::read_to_string(&path).map_err(io)?;
        let rel = path.strip_prefix(dir).unwrap_or(&path).to_string_lossy().replace('\\', "/");
        let stem = path.file_stem().map(|s| s.to_string_lossy().replace(['_', '-'], " ")).unwrap_or_default();
        let (title, body) = title_and_body(&text, &stem);
        if body.is_empty() {
            tracing::warn!(file = %rel, "skipping empty document");
            continue;
        }
        let modified: DateTime<Utc> = fs::metadata(&path).and_then(|m| m.modified()).map_err(io)?.into();
        let id = content_id(&["document", &rel, &body]);
        docs.push(Document::new(id, title, body, Some(rel), modified)?);
    }
    Ok(docs)
}

pub fn read_seed_faq(path: &Path) -> Result<Vec<FaqEntry>, PipelineError> {
    let lines: Vec<SeedLine> = read_json_lines(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(lines.len());
    for l in lines {
        let entry = match l.id {
            Some(id) => FaqEntry::with_id(FaqId::new(id), l.question, l.answer, FaqOrigin::Seed, None)?,
            None => FaqEntry::canonical(l.question, l.answer, FaqOrigin::Seed, None)?,
        };
        if !seen.insert(entry.id.clone()) {
            return Err(PipelineError::Input(format!("{}: duplicate seed id {}", path.display(), entry.id)));
        }
        out.push(entry);
    }
    Ok(out)
}

/// Loads raw documents (and optionally a seed FAQ file) into the store.
pub fn ingest(store: &Store, docs_dir: &Path, seed_faq: Option<&Path>) -> Result<IngestReport, PipelineError> {
    let docs = read_documents(docs_dir)?;
    if docs.is_empty() {
        return Err(PipelineError::Input(format!("no documents found under {}", docs_dir.display())));
    }
    store.save_documents(&docs)?;
    let mut report = IngestReport { documents: docs.len(), seed_faq: 0 };
    if let Some(path) = seed_faq {
        let seed = read_seed_faq(path)?;
        report.seed_faq = seed.len();
        store.save_seed_faq(&seed)?;
    }
    tracing::info!(?report, "ingested");
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AugmentReport {
    pub documents: usize,
    pub chunks: usize,
}

/// Chunks, rewrites, summarises and embeds every stored document.
pub fn augment(store: &Store, config: &AppConfig, providers: &Providers) -> Result<AugmentReport, PipelineError> {
    let documents = store.load_documents()?;
    let augmenter = Augmenter {
        generators: &providers.generators,
        embedder: providers.embedder.as_ref(),
        spec: &config.generator,
        config: &config.augment,
    };
    let out = augmenter.augment_corpus(&documents)?;
    let report = AugmentReport { documents: documents.len(), chunks: out.chunks.len() };
    store.save_corpus(&Corpus { documents, chunks: out.chunks, records: out.records })?;
    Ok(report)
}

/// Builds the enriched FAQ set from the seed FAQ and the augmented chunks.
pub fn enrich(store: &Store, config: &AppConfig, providers: &Providers) -> Result<EnrichStats, PipelineError> {
    let corpus = store.load_corpus(Some(providers.embedder.dimension()))?;
    let seed = if store.has_seed_faq() { store.load_seed_faq()? } else { Vec::new() };
    let enricher = Enricher {
        generators: &providers.generators,
        embedder: providers.embedder.as_ref(),
        spec: &config.generator,
        templates: &config.augment.templates,
    };
    let (entries, stats) = enricher.enrich(&corpus.chunks, &seed, config.enrich.n_variants)?;
    store.save_faq(&entries)?;
    Ok(stats)
}

/// Sweep queries for both tiers plus the FAQ index they are run against.
#[derive(Debug, Clone)]
pub struct TuningSet {
    /// The FAQ index without the held-out paraphrases.
    pub faq_index: VectorIndex,
    pub doc_index: VectorIndex,
    pub faq_queries: Vec<LabeledQuery>,
    pub doc_queries: Vec<LabeledQuery>,
}

enum Probe<'a> {
    HeldOut(&'a FaqEntry),
    Summary(&'a Chunk),
}

/// Samples sweep queries from both sources: one held-out paraphrase per
/// canonical group that has paraphrases, and each chunk's summary sentence.
///
/// For the FAQ tier a held-out paraphrase is relevant to the rest of its
/// group, and a chunk summary to the entries generated from that chunk; a
/// summary with no such entries is labeled for abstention. For the document
/// tier a summary is relevant to its chunk, and a paraphrase to the chunk
/// its canonical entry came from (paraphrases of seed entries are left out).
pub fn build_tuning_set(
    faq: &[FaqEntry],
    chunks: &[Chunk],
    embedder: &dyn Embedder,
    tuning: &TuningConfig,
) -> Result<TuningSet, PipelineError> {
    let dim = embedder.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(tuning.seed);

    let mut groups: BTreeMap<&str, Vec<&FaqEntry>> = BTreeMap::new();
    for e in faq {
        groups.entry(e.canonical_id.as_str()).or_default().push(e);
    }
    let mut probes: Vec<Probe> = Vec::new();
    for members in groups.values() {
        let paraphrases: Vec<&&FaqEntry> = members.iter().filter(|e| e.is_paraphrase()).collect();
        if let Some(p) = paraphrases.choose(&mut rng) {
            probes.push(Probe::HeldOut(p));
        }
    }
    probes.extend(chunks.iter().filter(|c| !c.summary.trim().is_empty()).map(Probe::Summary));
    probes.shuffle(&mut rng);
    probes.truncate(tuning.max_queries);

    let held_out: HashSet<&str> = probes
        .iter()
        .filter_map(|p| match p {
            Probe::HeldOut(e) => Some(e.id.as_str()),
            Probe::Summary(_) => None,
        })
        .collect();
    let kept: Vec<&FaqEntry> = faq.iter().filter(|e| !held_out.contains(e.id.as_str())).collect();
    let mut by_source: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for e in &kept {
        if let Some(s) = e.source_ref.as_deref() {
            by_source.entry(s).or_default().insert(e.id.to_string());
        }
    }
    let chunk_ids: HashSet<&str> = chunks.iter().map(|c| c.id.as_str()).collect();

    let texts: Vec<&str> = probes
        .iter()
        .map(|p| match p {
            Probe::HeldOut(e) => e.question.as_str(),
            Probe::Summary(c) => c.summary.as_str(),
        })
        .collect();
    let mut vectors = Vec::with_capacity(texts.len());
    for batch in texts.chunks(EMBED_BATCH) {
        vectors.extend(embedder.embed_batch(batch)?);
    }

    let mut faq_queries = Vec::new();
    let mut doc_queries = Vec::new();
    for (p, v) in probes.iter().zip(vectors) {
        match p {
            Probe::HeldOut(e) => {
                let relevant: BTreeSet<String> = groups[e.canonical_id.as_str()]
                    .iter()
                    .filter(|m| !held_out.contains(m.id.as_str()))
                    .map(|m| m.id.to_string())
                    .collect();
                let id = format!("faq:{}", e.id);
                if let Some(src) = e.source_ref.as_deref().filter(|s| chunk_ids.contains(s)) {
                    doc_queries.push(LabeledQuery { id: id.clone(), vector: v.clone(), relevant: [src.to_owned()].into() });
                }
                faq_queries.push(LabeledQuery { id, vector: v, relevant });
            }
            Probe::Summary(c) => {
                let id = format!("chunk:{}", c.id);
                let relevant = by_source.get(c.id.as_str()).cloned().unwrap_or_default();
                doc_queries.push(LabeledQuery { id: id.clone(), vector: v.clone(), relevant: [c.id.to_string()].into() });
                faq_queries.push(LabeledQuery { id, vector: v, relevant });
            }
        }
    }

    let faq_index = VectorIndex::build(
        dim,
        kept.iter().filter_map(|e| e.question_embedding.clone().map(|v| IndexEntry::new(e.id.to_string(), v))),
    )?;
    let doc_index = VectorIndex::build(dim, chunks.iter().map(|c| IndexEntry::new(c.id.to_string(), c.embedding.clone())))?;
    Ok(TuningSet { faq_index, doc_index, faq_queries, doc_queries })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneReport {
    pub faq: Option<SweepOutcome>,
    pub doc: Option<SweepOutcome>,
    pub faq_queries: usize,
    pub doc_queries: usize,
}

/// Sweeps both thresholds and returns `config` with the best values applied.
/// A tier without sweep queries keeps its current threshold.
pub fn tune(store: &Store, config: &AppConfig, providers: &Providers) -> Result<(AppConfig, TuneReport), PipelineError> {
    let dim = providers.embedder.dimension();
    let corpus = if store.has_chunks() { store.load_corpus(Some(dim))? } else { Corpus::default() };
    let chunk_ids: HashSet<&str> = corpus.chunks.iter().map(|c| c.id.as_str()).collect();
    let faq = if store.has_faq() { store.load_faq(Some(dim), Some(&chunk_ids))? } else { Vec::new() };
    let set = build_tuning_set(&faq, &corpus.chunks, providers.embedder.as_ref(), &config.tuning)?;

    let range = config.tuning.range;
    let faq_out = (!set.faq_queries.is_empty())
        .then(|| sweep_faq_threshold(&set.faq_index, &set.faq_queries, range))
        .transpose()?;
    let doc_out = (!set.doc_queries.is_empty())
        .then(|| sweep_doc_threshold(&set.doc_index, &set.doc_queries, range))
        .transpose()?;

    let mut tuned = config.clone();
    if let Some(o) = &faq_out {
        tuned.router.t_faq = o.best_t;
    }
    if let Some(o) = &doc_out {
        tuned.router.t_doc = o.best_t;
    }
    let report = TuneReport {
        faq: faq_out,
        doc: doc_out,
        faq_queries: set.faq_queries.len(),
        doc_queries: set.doc_queries.len(),
    };
    Ok((tuned, report))
}
