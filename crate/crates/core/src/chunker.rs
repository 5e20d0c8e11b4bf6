//! Sentence splitting and embedding-breakpoint chunking.
//!
//! A document is split into sentences, each sentence is embedded, and a
//! boundary is placed wherever the cosine distance between neighbouring
//! sentences exceeds the chosen percentile of all neighbour distances in
//! that document. The number of chunks therefore adapts to the content.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::index::cosine;
use crate::model::EmbeddingVector;
use crate::providers::{Embedder, ProviderError};

pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "e.g", "i.e", "approx", "dept", "univ",
    "fig", "inc", "ltd", "co", "mt", "vol", "ed", "pp", "a.m", "p.m", "ph.d", "b.sc", "m.sc", "u.s",
    "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "cf", "al",
];

const TERMINALS: &[char] = &['.', '!', '?', '…', '。', '！', '？'];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '”', '’', '»'];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkerParams {
    /// Neighbour-distance percentile (0, 100) above which a boundary is placed.
    pub breakpoint_percentile: f64,
    pub min_sentences_per_chunk: usize,
    pub max_chars_per_chunk: usize,
    /// Lowercase tokens (without the final period) that do not end a sentence.
    pub abbreviations: Vec<String>,
}

impl Default for ChunkerParams {
    fn default() -> Self {
        Self {
            breakpoint_percentile: 90.0,
            min_sentences_per_chunk: 1,
            max_chars_per_chunk: 1500,
            abbreviations: DEFAULT_ABBREVIATIONS.iter().map(|s| (*s).to_owned()).collect(),
        }
    }
}

impl ChunkerParams {
    pub fn validate(&self) -> Result<(), ChunkError> {
        let p = self.breakpoint_percentile;
        if !(p > 0.0 && p < 100.0) {
            return Err(ChunkError::InvalidParams(format!("breakpoint percentile {p} outside (0, 100)")));
        }
        if self.min_sentences_per_chunk == 0 {
            return Err(ChunkError::InvalidParams("min_sentences_per_chunk must be at least 1".into()));
        }
        if self.max_chars_per_chunk < 200 {
            return Err(ChunkError::InvalidParams(format!(
                "max_chars_per_chunk {} is below 200",
                self.max_chars_per_chunk
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ChunkError {
    #[error("nothing to chunk")]
    NoSentences,
    #[error("sentence embedding failed: {0}")]
    Embedding(#[from] ProviderError),
    #[error("degenerate sentence embedding: {0}")]
    Degenerate(String),
    #[error("invalid chunker parameters: {0}")]
    InvalidParams(String),
}

/// A trimmed sentence and its byte span in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sentence<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

pub fn split_sentences(text: &str) -> Vec<Sentence<'_>> {
    split_sentences_with(text, DEFAULT_ABBREVIATIONS)
}

/// Splits on terminal punctuation followed by whitespace and on blank lines.
/// The gaps between consecutive spans contain only whitespace, so the input
/// is reconstructed by interleaving sentences with the original separators.
pub fn split_sentences_with<'a, S: AsRef<str>>(text: &'a str, abbreviations: &[S]) -> Vec<Sentence<'a>> {
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut iter = text.char_indices().peekable();

    let push = |from: usize, to: usize, out: &mut Vec<Sentence<'a>>| {
        let slice = &text[from..to];
        let lead = slice.len() - slice.trim_start().len();
        let trimmed = slice.trim();
        if !trimmed.is_empty() {
            out.push(Sentence {
                text: &text[from + lead..from + lead + trimmed.len()],
                start: from + lead,
                end: from + lead + trimmed.len(),
            });
        }
    };

    while let Some((i, c)) = iter.next() {
        if TERMINALS.contains(&c) {
            let mut end = i + c.len_utf8();
            while let Some(&(j, n)) = iter.peek() {
                if TERMINALS.contains(&n) || CLOSERS.contains(&n) {
                    end = j + n.len_utf8();
                    iter.next();
                } else {
                    break;
                }
            }
            let at_break = match iter.peek() {
                None => true,
                Some(&(_, n)) => n.is_whitespace() || matches!(c, '。' | '！' | '？'),
            };
            if at_break && !(c == '.' && is_abbreviation(&text[start..i], abbreviations)) {
                push(start, end, &mut out);
                start = end;
            }
        } else if c == '\n' {
            // A blank line closes the sentence even without punctuation.
            let rest = &text[i + 1..];
            let blank = rest
                .find(|ch: char| ch != ' ' && ch != '\t' && ch != '\r')
                .map(|p| rest[p..].starts_with('\n'))
                .unwrap_or(false);
            if blank {
                push(start, i, &mut out);
                start = i;
            }
        }
    }
    push(start, text.len(), &mut out);
    out
}

fn is_abbreviation<S: AsRef<str>>(before_period: &str, abbreviations: &[S]) -> bool {
    let token = before_period
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(['(', '"', '\'', '“', '[']);
    if token.is_empty() {
        return false;
    }
    let mut chars = token.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        // Initials such as "J. Smith".
        if c.is_uppercase() {
            return true;
        }
    }
    let lower = token.to_lowercase();
    abbreviations.iter().any(|a| a.as_ref() == lower)
}

/// A contiguous run of sentences from one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawChunk {
    /// Source text from the first to the last sentence, separators included.
    pub text: String,
    /// Indices into the sentence list.
    pub sentences: Range<usize>,
}

/// Splits `source` into sentences and groups them into chunks.
pub fn chunk_text(source: &str, embedder: &dyn Embedder, params: &ChunkerParams) -> Result<Vec<RawChunk>, ChunkError> {
    let sentences = split_sentences_with(source, &params.abbreviations);
    chunk(source, &sentences, embedder, params)
}

/// Groups consecutive `sentences` of `source` into semantically coherent chunks.
pub fn chunk(
    source: &str,
    sentences: &[Sentence<'_>],
    embedder: &dyn Embedder,
    params: &ChunkerParams,
) -> Result<Vec<RawChunk>, ChunkError> {
    params.validate()?;
    if sentences.is_empty() {
        return Err(ChunkError::NoSentences);
    }
    let texts: Vec<&str> = sentences.iter().map(|s| s.text).collect();
    let vectors = if texts.len() > 1 { embedder.embed_batch(&texts)? } else { Vec::new() };
    let distances = neighbour_distances(&vectors)?;
    let groups = group_sentences(source, sentences, &distances, params);
    Ok(groups
        .into_iter()
        .map(|r| RawChunk {
            text: source[sentences[r.start].start..sentences[r.end - 1].end].to_owned(),
            sentences: r,
        })
        .collect())
}

/// `1 - cos` between each sentence and the next.
pub fn neighbour_distances(vectors: &[EmbeddingVector]) -> Result<Vec<f64>, ChunkError> {
    vectors
        .windows(2)
        .map(|w| {
            cosine(&w[0], &w[1])
                .map(|c| 1.0 - c)
                .map_err(|e| ChunkError::Degenerate(e.to_string()))
        })
        .collect()
}

/// Linear-interpolation percentile (the common "linear" definition).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Breakpoints, then minimum-size merging, then recursive splitting of
/// oversized groups at their largest internal gap.
pub fn group_sentences(
    source: &str,
    sentences: &[Sentence<'_>],
    distances: &[f64],
    params: &ChunkerParams,
) -> Vec<Range<usize>> {
    let n = sentences.len();
    let threshold = percentile(distances, params.breakpoint_percentile);
    let mut groups = Vec::new();
    let mut start = 0;
    for (i, &d) in distances.iter().enumerate() {
        if d > threshold {
            groups.push(start..i + 1);
            start = i + 1;
        }
    }
    groups.push(start..n);

    let min = params.min_sentences_per_chunk;
    let mut merged: Vec<Range<usize>> = Vec::new();
    let mut pending: Option<Range<usize>> = None;
    for g in groups {
        let cur = match pending.take() {
            Some(p) => p.start..g.end,
            None => g,
        };
        if cur.len() >= min {
            merged.push(cur);
        } else {
            pending = Some(cur);
        }
    }
    if let Some(rest) = pending {
        merged.push(rest);
    }

    let mut out = Vec::new();
    for g in merged {
        split_oversized(source, sentences, distances, g, params, &mut out);
    }
    out
}

fn split_oversized(
    source: &str,
    sentences: &[Sentence<'_>],
    distances: &[f64],
    group: Range<usize>,
    params: &ChunkerParams,
    out: &mut Vec<Range<usize>>,
) {
    let len_of = |r: &Range<usize>| source[sentences[r.start].start..sentences[r.end - 1].end].chars().count();
    if group.len() < 2 || len_of(&group) <= params.max_chars_per_chunk {
        out.push(group);
        return;
    }
    let min = params.min_sentences_per_chunk;
    // Gap `i` sits between sentence i and i + 1.
    let gaps: Vec<usize> = (group.start..group.end - 1).collect();
    let respecting: Vec<usize> = gaps
        .iter()
        .copied()
        .filter(|&i| i + 1 - group.start >= min && group.end - (i + 1) >= min)
        .collect();
    let candidates = if respecting.is_empty() { gaps } else { respecting };
    let best = candidates
        .into_iter()
        .map(|i| {
            let left = len_of(&(group.start..i + 1));
            let right = len_of(&(i + 1..group.end));
            (i, distances.get(i).copied().unwrap_or(0.0), left.abs_diff(right))
        })
        .min_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)))
        .map(|(i, _, _)| i)
        .expect("group has at least one gap");
    split_oversized(source, sentences, distances, group.start..best + 1, params, out);
    split_oversized(source, sentences, distances, best + 1..group.end, params, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::{FailingEmbedder, HashEmbedder, KeywordEmbedder};
    use proptest::prelude::*;

    fn texts<'a>(s: &[Sentence<'a>]) -> Vec<&'a str> {
        s.iter().map(|s| s.text).collect()
    }

    fn reconstructs(text: &str, sentences: &[Sentence<'_>]) -> bool {
        let mut pos = 0;
        for s in sentences {
            if !text[pos..s.start].chars().all(char::is_whitespace) || &text[s.start..s.end] != s.text {
                return false;
            }
            pos = s.end;
        }
        text[pos..].chars().all(char::is_whitespace)
    }

    #[test]
    fn splits_on_terminal_punctuation() {
        let s = split_sentences("One. Two. Three.");
        assert_eq!(texts(&s), ["One.", "Two.", "Three."]);
        assert!(reconstructs("One. Two. Three.", &s));
    }

    #[test]
    fn unpunctuated_text_is_one_sentence() {
        let s = split_sentences("  no terminal punctuation here  ");
        assert_eq!(texts(&s), ["no terminal punctuation here"]);
    }

    #[test]
    fn abbreviation_golden() {
        let text = "Dr. Smith met Prof. Tran at 9 a.m. on campus. Fees (e.g. tuition) rose by 2.5 percent! \
                    Was J. R. Nguyen admitted? \"Yes,\" she said. See Fig. 3 for details.\n\n\
                    Admissions Office\nOpen daily";
        let s = split_sentences(text);
        assert_eq!(
            texts(&s),
            [
                "Dr. Smith met Prof. Tran at 9 a.m. on campus.",
                "Fees (e.g. tuition) rose by 2.5 percent!",
                "Was J. R. Nguyen admitted?",
                "\"Yes,\" she said.",
                "See Fig. 3 for details.",
                "Admissions Office\nOpen daily",
            ]
        );
        assert!(reconstructs(text, &s));
    }

    #[test]
    fn closing_quotes_stay_with_sentence() {
        let s = split_sentences("He said \"stop.\" Then left.");
        assert_eq!(texts(&s), ["He said \"stop.\"", "Then left."]);
    }

    #[test]
    fn cjk_terminals_split_without_spaces() {
        let s = split_sentences("今日は晴れ。明日は雨。");
        assert_eq!(texts(&s), ["今日は晴れ。", "明日は雨。"]);
    }

    #[test]
    fn percentile_linear_interpolation() {
        assert_eq!(percentile(&[0.0, 0.0, 1.0, 0.0, 0.0], 90.0), 0.6000000000000001);
        assert_eq!(percentile(&[3.0], 50.0), 3.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0), 2.5);
    }

    #[test]
    fn single_sentence_is_one_chunk() {
        let text = "Only one sentence here.";
        let chunks = chunk_text(text, &HashEmbedder::new(16), &ChunkerParams::default()).unwrap();
        assert_eq!(chunks, vec![RawChunk { text: text.into(), sentences: 0..1 }]);
    }

    #[test]
    fn identical_embeddings_give_one_chunk() {
        let e = KeywordEmbedder::new(4).rule("", vec![1.0, 0.0, 0.0, 0.0]);
        let text = "A one. A two. A three. A four.";
        let chunks = chunk_text(text, &e, &ChunkerParams::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, text);
    }

    #[test]
    fn identical_embeddings_still_capped_by_max_chars() {
        let e = KeywordEmbedder::new(4).rule("", vec![1.0, 0.0, 0.0, 0.0]);
        let sentence = format!("{}.", "word ".repeat(19).trim_end());
        let text = vec![sentence.as_str(); 12].join(" ");
        let params = ChunkerParams { max_chars_per_chunk: 300, ..Default::default() };
        let chunks = chunk_text(&text, &e, &params).unwrap();
        assert!(chunks.len() > 1);
        assert!(chunks.iter().all(|c| c.text.chars().count() <= 300));
        let covered: Vec<usize> = chunks.iter().flat_map(|c| c.sentences.clone()).collect();
        assert_eq!(covered, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn orthogonal_topics_split_between_them() {
        let e = KeywordEmbedder::new(4)
            .rule("alpha", vec![1.0, 0.0, 0.0, 0.0])
            .rule("beta", vec![0.0, 1.0, 0.0, 0.0]);
        let text = "alpha one. alpha two. alpha three. beta four. beta five. beta six.";
        // Distances: [0, 0, 1, 0, 0]; the 90th percentile is 0.6, so only
        // the gap after sentence three exceeds it.
        let chunks = chunk_text(text, &e, &ChunkerParams::default()).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].sentences, 0..3);
        assert_eq!(chunks[1].text, "beta four. beta five. beta six.");
    }

    #[test]
    fn min_sentences_merges_small_groups() {
        let text = "a. b. c. d. e.";
        let sentences = split_sentences(text);
        // Threshold at the 10th percentile is 0.56; gaps 1, 2 and 3 exceed it.
        let distances = [0.5, 0.9, 0.8, 0.7];
        let params = ChunkerParams { breakpoint_percentile: 10.0, min_sentences_per_chunk: 2, ..Default::default() };
        assert_eq!(group_sentences(text, &sentences, &distances, &params), vec![0..2, 2..4, 4..5]);
        let params = ChunkerParams { breakpoint_percentile: 10.0, ..Default::default() };
        assert_eq!(group_sentences(text, &sentences, &distances, &params), vec![0..2, 2..3, 3..4, 4..5]);
    }

    #[test]
    fn embedding_failure_propagates() {
        let err = chunk_text("One. Two.", &FailingEmbedder::new(4), &ChunkerParams::default()).unwrap_err();
        assert!(matches!(err, ChunkError::Embedding(ProviderError::Unreachable(_))));
    }

    #[test]
    fn invalid_params_rejected() {
        let p = ChunkerParams { max_chars_per_chunk: 100, ..Default::default() };
        assert!(p.validate().is_err());
        assert!(ChunkerParams { breakpoint_percentile: 100.0, ..Default::default() }.validate().is_err());
        assert_eq!(chunk("", &[], &HashEmbedder::new(4), &ChunkerParams::default()).unwrap_err(), ChunkError::NoSentences);
    }

    fn sentence_text() -> impl Strategy<Value = String> {
        prop::collection::vec("[a-zA-Z]{1,8}( [a-zA-Z]{1,8}){0,6}[.!?]", 1..25).prop_map(|v| v.join(" "))
    }

    proptest! {
        #[test]
        fn sentences_reconstruct_input(text in "\\PC{1,200}") {
            let s = split_sentences(&text);
            prop_assert!(reconstructs(&text, &s));
            prop_assert!(s.iter().all(|s| !s.text.is_empty()));
        }

        #[test]
        fn chunks_partition_sentences(text in sentence_text(), p in 5.0f64..95.0, min in 1usize..4) {
            let e = HashEmbedder::new(32);
            let params = ChunkerParams { breakpoint_percentile: p, min_sentences_per_chunk: min, max_chars_per_chunk: 200, ..Default::default() };
            let sentences = split_sentences(&text);
            let chunks = chunk(&text, &sentences, &e, &params).unwrap();
            let covered: Vec<usize> = chunks.iter().flat_map(|c| c.sentences.clone()).collect();
            prop_assert_eq!(covered, (0..sentences.len()).collect::<Vec<_>>());
            prop_assert!(!chunks.is_empty());
            prop_assert_eq!(&chunks, &chunk(&text, &sentences, &e, &params).unwrap());
            for c in &chunks {
                prop_assert_eq!(c.text.as_str(), &text[sentences[c.sentences.start].start..sentences[c.sentences.end - 1].end]);
            }
        }

        #[test]
        fn varied_embeddings_never_fewer_boundaries(text in sentence_text()) {
            let varied = HashEmbedder::new(32);
            let flat = KeywordEmbedder::new(32).rule("", {
                let mut v = vec![0.0; 32];
                v[0] = 1.0;
                v
            });
            let params = ChunkerParams { max_chars_per_chunk: 100_000, ..Default::default() };
            let a = chunk_text(&text, &varied, &params).unwrap();
            let b = chunk_text(&text, &flat, &params).unwrap();
            prop_assert!(a.len() >= b.len());
        }
    }
}
