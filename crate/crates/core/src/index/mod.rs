//! Exact cosine-similarity search.
//!
//! Vectors are unit-normalized on insert so that cosine is a dot product.
//! Entries are kept sorted by key, which makes the "ascending key" tie-break
//! the same as ascending row position.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::model::EmbeddingVector;

pub mod kernel;

use kernel::BlockedMatrix;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum IndexError {
    #[error("vector has {got} dimensions, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector for {0}")]
    ZeroVector(String),
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("top_k must be at least 1")]
    InvalidTopK,
}

/// Cosine similarity, computed in double precision.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, IndexError> {
    if a.dim() != b.dim() {
        return Err(IndexError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (na, nb) = (a.l2_norm(), b.l2_norm());
    if na == 0.0 {
        return Err(IndexError::ZeroVector("left operand".into()));
    }
    if nb == 0.0 {
        return Err(IndexError::ZeroVector("right operand".into()));
    }
    let dot: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub key: String,
    pub vector: EmbeddingVector,
}

impl IndexEntry {
    pub fn new(key: impl Into<String>, vector: EmbeddingVector) -> Self {
        Self {
            key: key.into(),
            vector,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub key: String,
    pub score: f64,
}

/// Immutable snapshot of unit-normalized vectors.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    keys: Vec<String>,
    data: BlockedMatrix,
}

fn unit(values: &[f32]) -> Option<Vec<f32>> {
    let norm = values
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    (norm > 0.0).then(|| values.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

impl VectorIndex {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            keys: Vec::new(),
            data: BlockedMatrix::zeros(dim, 0),
        }
    }

    pub fn build(dim: usize, entries: impl IntoIterator<Item = IndexEntry>) -> Result<Self, IndexError> {
        let mut entries: Vec<IndexEntry> = entries.into_iter().collect();
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        if let Some(w) = entries.windows(2).find(|w| w[0].key == w[1].key) {
            return Err(IndexError::DuplicateKey(w[0].key.clone()));
        }
        let mut keys = Vec::with_capacity(entries.len());
        let mut data = BlockedMatrix::zeros(dim, entries.len());
        for (i, entry) in entries.into_iter().enumerate() {
            if entry.vector.dim() != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    got: entry.vector.dim(),
                });
            }
            let v = unit(entry.vector.as_slice()).ok_or_else(|| IndexError::ZeroVector(entry.key.clone()))?;
            data.set_row(i, &v);
            keys.push(entry.key);
        }
        Ok(Self { dim, keys, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    /// Stored (normalized) vector of row `i`.
    pub fn row(&self, i: usize) -> Vec<f32> {
        self.data.row(i)
    }

    pub fn entries(&self) -> impl Iterator<Item = IndexEntry> + '_ {
        self.keys.iter().enumerate().map(|(i, k)| IndexEntry {
            key: k.clone(),
            vector: EmbeddingVector::new(self.row(i)).expect("stored vectors are finite"),
        })
    }

    fn prepare(&self, query: &[f32]) -> Result<Vec<f32>, IndexError> {
        if query.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        unit(query).ok_or_else(|| IndexError::ZeroVector("query".into()))
    }

    /// Cosine score of every row against `query`, in row (key) order.
    pub fn scores(&self, query: &[f32]) -> Result<Vec<f32>, IndexError> {
        let q = self.prepare(query)?;
        let mut out = vec![0f32; self.len()];
        kernel::dot_rows(&self.data, &q, &mut out);
        for s in &mut out {
            *s = s.clamp(-1.0, 1.0);
        }
        Ok(out)
    }

    /// At most `top_k` matches with score ≥ `threshold`, best first; equal
    /// scores are ordered by ascending key.
    pub fn search(&self, query: &[f32], threshold: f64, top_k: usize) -> Result<Vec<Match>, IndexError> {
        Ok(self.search_batch(&[query], threshold, top_k)?.pop().unwrap_or_default())
    }

    /// [`search`](Self::search) for several queries with one pass over the matrix.
    pub fn search_batch(&self, queries: &[&[f32]], threshold: f64, top_k: usize) -> Result<Vec<Vec<Match>>, IndexError> {
        if top_k == 0 {
            return Err(IndexError::InvalidTopK);
        }
        let prepared = queries
            .iter()
            .map(|q| self.prepare(q))
            .collect::<Result<Vec<_>, _>>()?;
        if self.is_empty() {
            return Ok(vec![Vec::new(); queries.len()]);
        }
        let refs: Vec<&[f32]> = prepared.iter().map(Vec::as_slice).collect();
        let rows = self.len();
        let mut scores = vec![0f32; rows * refs.len()];
        kernel::dot_rows_batch(&self.data, &refs, &mut scores);
        Ok(scores
            .chunks_exact(rows)
            .map(|s| self.select(s, threshold, top_k))
            .collect())
    }

    fn select(&self, scores: &[f32], threshold: f64, top_k: usize) -> Vec<Match> {
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(top_k + 1);
        for (idx, &raw) in scores.iter().enumerate() {
            let score = raw.clamp(-1.0, 1.0);
            if f64::from(score) < threshold {
                continue;
            }
            let cand = Candidate { score, idx };
            if heap.len() < top_k {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if cand < *worst {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| Match {
                key: self.keys[c.idx].clone(),
                score: f64::from(c.score),
            })
            .collect()
    }
}

/// Ordered best-first: `a < b` means `a` ranks ahead of `b`.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f32,
    idx: usize,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        unit(&v).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let u = ev(&[0.6, 0.8]);
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), 0.0);
        // dot 32, |a| = sqrt(14), |b| = sqrt(77)
        let want = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        let got = cosine(&ev(&[1.0, 2.0, 3.0]), &ev(&[4.0, 5.0, 6.0])).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.9746).abs() < 1e-4);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine(&ev(&[0.0, 0.0]), &ev(&[1.0, 0.0])), Err(IndexError::ZeroVector(_))));
        assert!(matches!(
            cosine(&ev(&[1.0, 0.0]), &ev(&[1.0, 0.0, 0.0])),
            Err(IndexError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn build_rejects_duplicates_and_bad_vectors() {
        let e = |k: &str, v: &[f32]| IndexEntry::new(k, ev(v));
        assert_eq!(
            VectorIndex::build(2, [e("a", &[1.0, 0.0]), e("a", &[0.0, 1.0])]).unwrap_err(),
            IndexError::DuplicateKey("a".into())
        );
        assert!(matches!(VectorIndex::build(2, [e("z", &[0.0, 0.0])]), Err(IndexError::ZeroVector(k)) if k == "z"));
        assert!(matches!(
            VectorIndex::build(3, [e("a", &[1.0, 0.0])]),
            Err(IndexError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn unattainable_threshold_returns_nothing() {
        let idx = VectorIndex::build(2, [IndexEntry::new("a", ev(&[1.0, 0.0]))]).unwrap();
        assert!(idx.search(&[1.0, 0.0], 1.01, 5).unwrap().is_empty());
    }

    #[test]
    fn query_itself_ranks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let entries: Vec<_> = (0..50).map(|i| IndexEntry::new(format!("k{i:02}"), ev(&random_unit(&mut rng, 16)))).collect();
        let q = entries[17].vector.clone();
        let idx = VectorIndex::build(16, entries).unwrap();
        let hits = idx.search(q.as_slice(), 0.9, 3).unwrap();
        assert_eq!(hits[0].key, "k17");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ties_break_by_ascending_key() {
        let v = ev(&[1.0, 1.0]);
        let idx = VectorIndex::build(
            2,
            ["c", "a", "b"].map(|k| IndexEntry::new(k, v.clone())),
        )
        .unwrap();
        let keys: Vec<_> = idx.search(&[1.0, 1.0], 0.0, 2).unwrap().into_iter().map(|m| m.key).collect();
        assert_eq!(keys, ["a", "b"]);
    }

    #[test]
    fn errors_on_bad_queries() {
        let idx = VectorIndex::empty(3);
        assert_eq!(idx.search(&[1.0, 0.0, 0.0], 0.0, 0).unwrap_err(), IndexError::InvalidTopK);
        assert!(matches!(idx.search(&[1.0], 0.0, 1), Err(IndexError::DimensionMismatch { .. })));
        assert!(matches!(idx.search(&[0.0; 3], 0.0, 1), Err(IndexError::ZeroVector(_))));
        assert!(idx.search(&[1.0, 0.0, 0.0], -1.0, 4).unwrap().is_empty());
    }

    #[test]
    fn batch_equals_individual_searches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let idx = VectorIndex::build(
            24,
            (0..300).map(|i| IndexEntry::new(format!("{i:04}"), ev(&random_unit(&mut rng, 24)))),
        )
        .unwrap();
        let qs: Vec<Vec<f32>> = (0..7).map(|_| random_unit(&mut rng, 24)).collect();
        let refs: Vec<&[f32]> = qs.iter().map(Vec::as_slice).collect();
        let batch = idx.search_batch(&refs, 0.1, 9).unwrap();
        for (q, got) in qs.iter().zip(batch) {
            assert_eq!(idx.search(q, 0.1, 9).unwrap(), got);
        }
    }

    proptest! {
        #[test]
        fn full_search_is_sorted_scores(seed in any::<u64>(), n in 1usize..60, dim in 2usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = VectorIndex::build(
                dim,
                (0..n).map(|i| IndexEntry::new(format!("{i:03}"), ev(&random_unit(&mut rng, dim)))),
            ).unwrap();
            let q = random_unit(&mut rng, dim);
            let hits = idx.search(&q, -1.0, n).unwrap();
            prop_assert_eq!(hits.len(), n);
            let scores = idx.scores(&q).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let want: Vec<String> = order.iter().map(|&i| format!("{i:03}")).collect();
            let got: Vec<String> = hits.iter().map(|m| m.key.clone()).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn raising_threshold_never_adds_results(seed in any::<u64>(), t1 in -1.0f64..1.0, dt in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = VectorIndex::build(
                8,
                (0..40).map(|i| IndexEntry::new(format!("{i:03}"), ev(&random_unit(&mut rng, 8)))),
            ).unwrap();
            let q = random_unit(&mut rng, 8);
            let low = idx.search(&q, t1, 10).unwrap();
            let high = idx.search(&q, t1 + dt, 10).unwrap();
            prop_assert!(high.len() <= low.len());
            prop_assert!(high.iter().all(|m| m.score >= t1 + dt));
            prop_assert_eq!(idx.search(&q, t1, 10).unwrap(), low);
        }
    }
}
