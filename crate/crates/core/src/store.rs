//! On-disk store: one JSON record per line, preceded by a header line.
//!
//! ```text
//! <root>/corpus/documents.jsonl
//! <root>/corpus/chunks.jsonl
//! <root>/corpus/augmentation.jsonl
//! <root>/faq/seed.jsonl
//! <root>/faq/entries.jsonl
//! <root>/index/<name>.jsonl
//! <root>/eval/judgments.jsonl
//! <root>/eval/fixtures/*.jsonl
//! ```
//!
//! The header is `{"schema": "...", "version": 1, "dimension": m | null, "count": n}`.
//! Every file is replaced whole through a temporary file and a rename.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::index::{IndexEntry, IndexError, VectorIndex};
use crate::model::{validate_corpus, validate_faq_set, AugmentationRecord, Chunk, Document, FaqEntry};

pub const SCHEMA_VERSION: u32 = 1;

pub const DOCUMENTS_SCHEMA: &str = "urag.documents";
pub const CHUNKS_SCHEMA: &str = "urag.chunks";
pub const AUGMENTATION_SCHEMA: &str = "urag.augmentation";
pub const FAQ_SCHEMA: &str = "urag.faq";
pub const INDEX_SCHEMA: &str = "urag.index";
pub const RECORDS_SCHEMA: &str = "urag.records";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: file not found")]
    Missing(PathBuf),
    #[error("{path}: bad header: {message}")]
    Header { path: PathBuf, message: String },
    #[error("{path}: schema {found} version {version} is not supported (expected {expected} version {SCHEMA_VERSION})")]
    Schema {
        path: PathBuf,
        found: String,
        version: u32,
        expected: &'static str,
    },
    #[error("{path}: stored dimension {stored} does not match the configured embedder ({expected})")]
    Dimension { path: PathBuf, stored: usize, expected: usize },
    #[error("{} invalid record(s) in {}:\n  {}", .violations.len(), .path.display(), .violations.join("\n  "))]
    Invalid { path: PathBuf, violations: Vec<String> },
    #[error("{path}: {source}")]
    Index {
        path: PathBuf,
        #[source]
        source: IndexError,
    },
}

impl StoreError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io { path: path.to_owned(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub version: u32,
    pub dimension: Option<usize>,
    pub count: usize,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

impl Header {
    pub fn new(schema: &str, dimension: Option<usize>, count: usize) -> Self {
        Self { schema: schema.to_owned(), version: SCHEMA_VERSION, dimension, count, extra: Map::new() }
    }
}

/// Records parsed from one file plus every problem met on the way.
struct Parsed<T> {
    header: Header,
    records: Vec<T>,
    problems: Vec<String>,
}

/// Writes `header` and `records` to `path` through a temp file in the same directory.
pub fn write_records<T: Serialize>(path: &Path, header: &Header, records: &[T]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| StoreError::io(dir, e))?;
    {
        let mut w = BufWriter::with_capacity(1 << 20, tmp.as_file());
        write_line(&mut w, header).map_err(|e| StoreError::io(path, e))?;
        for r in records {
            write_line(&mut w, r).map_err(|e| StoreError::io(path, e))?;
        }
        w.flush().map_err(|e| StoreError::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| StoreError::io(path, e))?;
    tmp.persist(path).map_err(|e| StoreError::io(path, e.error))?;
    Ok(())
}

fn write_line<W: Write, T: Serialize + ?Sized>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(std::io::Error::other)?;
    w.write_all(b"\n")
}

fn read_records<T: DeserializeOwned>(path: &Path, schema: &'static str) -> Result<Parsed<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::Missing(path.to_owned())),
        Err(e) => return Err(StoreError::io(path, e)),
    };
    let mut lines = BufReader::with_capacity(1 << 20, file).lines();
    let first = lines
        .next()
        .transpose()
        .map_err(|e| StoreError::io(path, e))?
        .ok_or_else(|| StoreError::Header { path: path.to_owned(), message: "file is empty".into() })?;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| StoreError::Header { path: path.to_owned(), message: e.to_string() })?;
    if header.schema != schema || header.version != SCHEMA_VERSION {
        return Err(StoreError::Schema {
            path: path.to_owned(),
            found: header.schema,
            version: header.version,
            expected: schema,
        });
    }

    let mut records = Vec::with_capacity(header.count);
    let mut problems = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => records.push(r),
            Err(e) => problems.push(format!("line {}: {e}", i + 2)),
        }
    }
    if problems.is_empty() && records.len() != header.count {
        problems.push(format!("header announces {} records, file has {}", header.count, records.len()));
    }
    Ok(Parsed { header, records, problems })
}

fn check_dimension(path: &Path, header: &Header, expected: Option<usize>) -> Result<(), StoreError> {
    match (header.dimension, expected) {
        (Some(stored), Some(expected)) if stored != expected => {
            Err(StoreError::Dimension { path: path.to_owned(), stored, expected })
        }
        _ => Ok(()),
    }
}

fn finish(path: &Path, problems: Vec<String>) -> Result<(), StoreError> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(StoreError::Invalid { path: path.to_owned(), violations: problems })
    }
}

/// Reads a plain record file (judgments, fixtures) written with [`save_records`].
pub fn load_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let parsed = read_records(path, RECORDS_SCHEMA)?;
    finish(path, parsed.problems)?;
    Ok(parsed.records)
}

pub fn save_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    write_records(path, &Header::new(RECORDS_SCHEMA, None, records.len()), records)
}

/// Reads bare JSON lines without a header (hand-written input files).
pub fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    let mut out = Vec::new();
    let mut problems = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) => problems.push(format!("line {}: {e}", i + 1)),
        }
    }
    finish(path, problems)?;
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub chunks: Vec<Chunk>,
    pub records: Vec<AugmentationRecord>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn documents_path(&self) -> PathBuf {
        self.root.join("corpus/documents.jsonl")
    }

    pub fn chunks_path(&self) -> PathBuf {
        self.root.join("corpus/chunks.jsonl")
    }

    pub fn augmentation_path(&self) -> PathBuf {
        self.root.join("corpus/augmentation.jsonl")
    }

    pub fn seed_faq_path(&self) -> PathBuf {
        self.root.join("faq/seed.jsonl")
    }

    pub fn faq_path(&self) -> PathBuf {
        self.root.join("faq/entries.jsonl")
    }

    pub fn index_path(&self, name: &str) -> PathBuf {
        self.root.join("index").join(format!("{name}.jsonl"))
    }

    pub fn judgments_path(&self) -> PathBuf {
        self.root.join("eval/judgments.jsonl")
    }

    pub fn fixture_path(&self, name: &str) -> PathBuf {
        self.root.join("eval/fixtures").join(format!("{name}.jsonl"))
    }

    pub fn save_documents(&self, documents: &[Document]) -> Result<(), StoreError> {
        write_records(&self.documents_path(), &Header::new(DOCUMENTS_SCHEMA, None, documents.len()), documents)
    }

    pub fn load_documents(&self) -> Result<Vec<Document>, StoreError> {
        let path = self.documents_path();
        let parsed = read_records::<Document>(&path, DOCUMENTS_SCHEMA)?;
        let mut problems = parsed.problems;
        let violations = validate_corpus(&parsed.records, &[], &[]);
        problems.extend(violations.iter().map(ToString::to_string));
        finish(&path, problems)?;
        Ok(parsed.records)
    }

    /// Writes documents, chunks and augmentation records.
    pub fn save_corpus(&self, corpus: &Corpus) -> Result<(), StoreError> {
        self.save_documents(&corpus.documents)?;
        let dim = corpus.chunks.first().map(|c| c.embedding.dim());
        write_records(&self.chunks_path(), &Header::new(CHUNKS_SCHEMA, dim, corpus.chunks.len()), &corpus.chunks)?;
        write_records(
            &self.augmentation_path(),
            &Header::new(AUGMENTATION_SCHEMA, None, corpus.records.len()),
            &corpus.records,
        )
    }

    pub fn has_chunks(&self) -> bool {
        self.chunks_path().exists()
    }

    /// Loads the augmented corpus and checks it as a whole. `dim` is the
    /// embedder's dimension; stored vectors must match it.
    pub fn load_corpus(&self, dim: Option<usize>) -> Result<Corpus, StoreError> {
        let documents = self.load_documents()?;
        let chunks_path = self.chunks_path();
        let chunks = read_records::<Chunk>(&chunks_path, CHUNKS_SCHEMA)?;
        check_dimension(&chunks_path, &chunks.header, dim)?;
        let want = dim.or(chunks.header.dimension);
        let mut problems = chunks.problems;
        for c in &chunks.records {
            if let Some(want) = want {
                if c.embedding.dim() != want {
                    problems.push(format!("{}: embedding has {} dimensions, expected {want}", c.id, c.embedding.dim()));
                }
            }
        }
        let records_path = self.augmentation_path();
        let records = read_records::<AugmentationRecord>(&records_path, AUGMENTATION_SCHEMA)?;
        problems.extend(records.problems.iter().map(|p| format!("augmentation.jsonl {p}")));

        let doc_ids: HashSet<&str> = documents.iter().map(|d| d.id.as_str()).collect();
        let mut seen = HashSet::new();
        for r in &records.records {
            if !doc_ids.contains(r.document_id.as_str()) {
                problems.push(format!("{}: augmentation record for unknown document", r.document_id));
            }
            if !seen.insert(r.document_id.as_str()) {
                problems.push(format!("{}: more than one augmentation record", r.document_id));
            }
        }
        for id in &doc_ids {
            if !seen.contains(id) {
                problems.push(format!("{id}: document has no augmentation record"));
            }
        }
        problems.extend(
            validate_corpus(&documents, &chunks.records, &records.records)
                .iter()
                .map(ToString::to_string),
        );
        finish(&chunks_path, problems)?;
        Ok(Corpus { documents, chunks: chunks.records, records: records.records })
    }

    pub fn save_seed_faq(&self, entries: &[FaqEntry]) -> Result<(), StoreError> {
        let dim = entries.iter().find_map(|e| e.question_embedding.as_ref().map(|v| v.dim()));
        write_records(&self.seed_faq_path(), &Header::new(FAQ_SCHEMA, dim, entries.len()), entries)
    }

    pub fn has_seed_faq(&self) -> bool {
        self.seed_faq_path().exists()
    }

    pub fn load_seed_faq(&self) -> Result<Vec<FaqEntry>, StoreError> {
        let path = self.seed_faq_path();
        let parsed = read_records::<FaqEntry>(&path, FAQ_SCHEMA)?;
        let mut problems = parsed.problems;
        problems.extend(validate_faq_set(&parsed.records, None).iter().map(ToString::to_string));
        finish(&path, problems)?;
        Ok(parsed.records)
    }

    pub fn save_faq(&self, entries: &[FaqEntry]) -> Result<(), StoreError> {
        let dim = entries.iter().find_map(|e| e.question_embedding.as_ref().map(|v| v.dim()));
        write_records(&self.faq_path(), &Header::new(FAQ_SCHEMA, dim, entries.len()), entries)
    }

    pub fn has_faq(&self) -> bool {
        self.faq_path().exists()
    }

    /// Loads the enriched FAQ set. Every entry must carry an embedding of
    /// dimension `dim`; with `chunk_ids`, source references are resolved too.
    pub fn load_faq(&self, dim: Option<usize>, chunk_ids: Option<&HashSet<&str>>) -> Result<Vec<FaqEntry>, StoreError> {
        let path = self.faq_path();
        let parsed = read_records::<FaqEntry>(&path, FAQ_SCHEMA)?;
        check_dimension(&path, &parsed.header, dim)?;
        let want = dim.or(parsed.header.dimension);
        let mut problems = parsed.problems;
        for e in &parsed.records {
            match (&e.question_embedding, want) {
                (None, _) => problems.push(format!("{}: entry has no question embedding", e.id)),
                (Some(v), Some(want)) if v.dim() != want => {
                    problems.push(format!("{}: embedding has {} dimensions, expected {want}", e.id, v.dim()))
                }
                _ => {}
            }
        }
        problems.extend(validate_faq_set(&parsed.records, chunk_ids).iter().map(ToString::to_string));
        finish(&path, problems)?;
        Ok(parsed.records)
    }

    pub fn save_index_snapshot(&self, name: &str, index: &VectorIndex) -> Result<(), StoreError> {
        let entries: Vec<IndexEntry> = index.entries().collect();
        write_records(&self.index_path(name), &Header::new(INDEX_SCHEMA, Some(index.dim()), entries.len()), &entries)
    }

    pub fn load_index_snapshot(&self, name: &str, dim: Option<usize>) -> Result<VectorIndex, StoreError> {
        let path = self.index_path(name);
        let parsed = read_records::<IndexEntry>(&path, INDEX_SCHEMA)?;
        check_dimension(&path, &parsed.header, dim)?;
        finish(&path, parsed.problems)?;
        let index_dim = dim
            .or(parsed.header.dimension)
            .ok_or_else(|| StoreError::Header { path: path.clone(), message: "index header has no dimension".into() })?;
        VectorIndex::build(index_dim, parsed.records).map_err(|source| StoreError::Index { path, source })
    }
}

impl fmt::Display for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root.display())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DocumentId, EmbeddingVector, FaqOrigin};
    use chrono::{DateTime, Utc};

    fn when() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2024-05-01T08:00:00Z").unwrap().with_timezone(&Utc)
    }

    fn vector(dim: usize, seed: usize) -> EmbeddingVector {
        EmbeddingVector::new((0..dim).map(|i| ((i + seed) % 7) as f32 - 3.0 + 0.5).collect()).unwrap()
    }

    fn corpus(dim: usize) -> Corpus {
        let mut c = Corpus::default();
        for d in 0..3 {
            let doc = Document::new(format!("doc{d}"), format!("Title {d}"), format!("Body of {d}."), None, when()).unwrap();
            for o in 0..2u32 {
                c.chunks.push(
                    Chunk::assemble(
                        doc.id.clone(),
                        o,
                        format!("raw {d}/{o}"),
                        format!("rewritten {d}/{o}"),
                        format!("summary {d}/{o}"),
                        vector(dim, d * 2 + o as usize),
                    )
                    .unwrap(),
                );
            }
            c.records.push(AugmentationRecord {
                document_id: doc.id.clone(),
                general_context: "ctx".into(),
                chunk_count: 2,
                provider_call_log: vec![],
                extra: Map::new(),
            });
            c.documents.push(doc);
        }
        c
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        let c = corpus(8);
        store.save_corpus(&c).unwrap();
        assert_eq!(store.load_corpus(Some(8)).unwrap(), c);
    }

    #[test]
    fn unknown_fields_survive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        let mut c = corpus(4);
        c.documents[0].extra.insert("department".into(), Value::from("registrar"));
        store.save_corpus(&c).unwrap();
        let loaded = store.load_corpus(None).unwrap();
        assert_eq!(loaded.documents[0].extra["department"], "registrar");
    }

    #[test]
    fn broken_parent_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        let mut c = corpus(4);
        c.chunks[3].parent_document_id = DocumentId::new("ghost");
        let bad = c.chunks[3].id.to_string();
        store.save_corpus(&c).unwrap();
        let err = store.load_corpus(Some(4)).unwrap_err();
        match err {
            StoreError::Invalid { violations, .. } => {
                assert!(violations.iter().any(|v| v.contains(&bad) && v.contains("ghost")), "{violations:?}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn every_violation_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        let c = corpus(4);
        store.save_corpus(&c).unwrap();
        let path = store.chunks_path();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        lines[1] = "{not json".into();
        lines[2] = lines[2].replace("doc0", "nowhere");
        lines[4] = lines[4].replace("\"summary\":\"summary", "\"summary\":\"two\\nlines");
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        let StoreError::Invalid { violations, .. } = store.load_corpus(Some(4)).unwrap_err() else {
            panic!("expected invalid")
        };
        assert!(violations.iter().any(|v| v.starts_with("line 2")));
        assert!(violations.iter().any(|v| v.contains("nowhere")));
        assert!(violations.iter().any(|v| v.contains("several lines") || v.contains("final_text")));
    }

    #[test]
    fn dimension_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        store.save_corpus(&corpus(4)).unwrap();
        assert!(matches!(store.load_corpus(Some(5)), Err(StoreError::Dimension { stored: 4, expected: 5, .. })));
    }

    #[test]
    fn newer_schema_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        store.save_documents(&corpus(4).documents).unwrap();
        let path = store.documents_path();
        let text = fs::read_to_string(&path).unwrap().replacen("\"version\":1", "\"version\":2", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(store.load_documents(), Err(StoreError::Schema { version: 2, .. })));
    }

    #[test]
    fn faq_requires_embeddings_and_resolved_sources() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        let seed = FaqEntry::canonical("What is it?", "A thing.", FaqOrigin::Seed, None).unwrap();
        let derived = FaqEntry::canonical("Where?", "Here.", FaqOrigin::GeneratedFromChunk, Some("chunk-x".into())).unwrap();
        let para = FaqEntry::paraphrase_of(&seed, "What's it?").unwrap();
        let entries = vec![
            seed.with_embedding(vector(4, 0)),
            derived.clone(),
            para.with_embedding(vector(4, 2)),
        ];
        store.save_faq(&entries).unwrap();
        let chunk_ids: HashSet<&str> = HashSet::new();
        let StoreError::Invalid { violations, .. } = store.load_faq(Some(4), Some(&chunk_ids)).unwrap_err() else {
            panic!("expected invalid")
        };
        assert_eq!(violations.len(), 2, "{violations:?}");
        let ok_ids: HashSet<&str> = ["chunk-x"].into();
        let mut fixed = entries.clone();
        fixed[1] = derived.with_embedding(vector(4, 1));
        store.save_faq(&fixed).unwrap();
        assert_eq!(store.load_faq(Some(4), Some(&ok_ids)).unwrap(), fixed);
    }

    #[test]
    fn index_snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        let index = VectorIndex::build(4, (0..20).map(|i| IndexEntry::new(format!("k{i:02}"), vector(4, i)))).unwrap();
        store.save_index_snapshot("faq", &index).unwrap();
        let back = store.load_index_snapshot("faq", Some(4)).unwrap();
        assert_eq!(back.keys(), index.keys());
        let q = vector(4, 3);
        assert_eq!(back.search(q.as_slice(), 0.0, 5).unwrap(), index.search(q.as_slice(), 0.0, 5).unwrap());
    }

    #[test]
    fn records_round_trip_and_writes_leave_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval/judgments.jsonl");
        let js = vec![crate::eval::Judgment { question_id: "q1".into(), correct: true, tier: None }];
        save_records(&path, &js).unwrap();
        save_records(&path, &js).unwrap();
        assert_eq!(load_records::<crate::eval::Judgment>(&path).unwrap(), js);
        assert_eq!(fs::read_dir(dir.path().join("eval")).unwrap().count(), 1);
    }
}
