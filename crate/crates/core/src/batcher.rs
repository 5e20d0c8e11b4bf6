//! Coalesces concurrent index searches into batched matrix passes.
//!
//! Requests are queued to one worker thread. Whenever the worker is free it
//! drains everything pending and runs one [`VectorIndex::search_batch`] per
//! (snapshot, index, threshold, k) group, so under load the matrix is read
//! once per batch instead of once per query.
//!
//! [`VectorIndex::search_batch`]: crate::index::VectorIndex::search_batch

use std::collections::HashMap;
use std::sync::mpsc::{self, Receiver, Sender, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crate::index::{IndexError, Match};
use crate::model::EmbeddingVector;
use crate::router::{IndexKind, KnowledgeBase, SearchBackend};

pub const DEFAULT_MAX_BATCH: usize = 64;

struct Request {
    kb: Arc<KnowledgeBase>,
    kind: IndexKind,
    query: EmbeddingVector,
    threshold: f64,
    top_k: usize,
    reply: SyncSender<Result<Vec<Match>, IndexError>>,
}

pub struct BatchedSearch {
    tx: Mutex<Option<Sender<Request>>>,
    worker: Option<JoinHandle<()>>,
}

impl BatchedSearch {
    pub fn new(max_batch: usize) -> Self {
        let (tx, rx) = mpsc::channel();
        let worker = std::thread::Builder::new()
            .name("search-batcher".into())
            .spawn(move || run(rx, max_batch.max(1)))
            .expect("spawn search batcher");
        Self { tx: Mutex::new(Some(tx)), worker: Some(worker) }
    }
}

impl Default for BatchedSearch {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_BATCH)
    }
}

impl Drop for BatchedSearch {
    fn drop(&mut self) {
        self.tx.lock().unwrap_or_else(|e| e.into_inner()).take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl SearchBackend for BatchedSearch {
    fn search(
        &self,
        kb: &Arc<KnowledgeBase>,
        kind: IndexKind,
        query: &EmbeddingVector,
        threshold: f64,
        top_k: usize,
    ) -> Result<Vec<Match>, IndexError> {
        let (reply, rx) = mpsc::sync_channel(1);
        let request = Request { kb: kb.clone(), kind, query: query.clone(), threshold, top_k, reply };
        let sent = {
            let guard = self.tx.lock().unwrap_or_else(|e| e.into_inner());
            guard.as_ref().map(|tx| tx.send(request))
        };
        match sent {
            Some(Ok(())) => rx.recv().unwrap_or_else(|_| kb.index(kind).search(query.as_slice(), threshold, top_k)),
            // Worker gone: search inline.
            _ => kb.index(kind).search(query.as_slice(), threshold, top_k),
        }
    }
}

type GroupKey = (usize, IndexKind, u64, usize);

fn run(rx: Receiver<Request>, max_batch: usize) {
    while let Ok(first) = rx.recv() {
        let mut pending = vec![first];
        while pending.len() < max_batch {
            match rx.try_recv() {
                Ok(r) => pending.push(r),
                Err(_) => break,
            }
        }
        let mut groups: HashMap<GroupKey, Vec<Request>> = HashMap::new();
        for r in pending {
            let key = (Arc::as_ptr(&r.kb) as usize, r.kind, r.threshold.to_bits(), r.top_k);
            groups.entry(key).or_default().push(r);
        }
        for (_, group) in groups {
            let head = &group[0];
            let queries: Vec<&[f32]> = group.iter().map(|r| r.query.as_slice()).collect();
            match head.kb.index(head.kind).search_batch(&queries, head.threshold, head.top_k) {
                Ok(results) => {
                    for (r, matches) in group.iter().zip(results) {
                        let _ = r.reply.send(Ok(matches));
                    }
                }
                Err(e) => {
                    for r in &group {
                        let _ = r.reply.send(Err(e.clone()));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FaqEntry, FaqOrigin};
    use crate::providers::mock::HashEmbedder;
    use crate::providers::Embedder;
    use crate::router::DirectSearch;

    #[test]
    fn batched_results_equal_direct_results() {
        let e = HashEmbedder::new(48);
        let faq: Vec<FaqEntry> = (0..300)
            .map(|i| {
                let q = format!("question number {i} about topic {}", i % 17);
                FaqEntry::canonical(q.clone(), "a", FaqOrigin::Seed, None).unwrap().with_embedding(e.embed(&q).unwrap())
            })
            .collect();
        let kb = Arc::new(KnowledgeBase::new(48, faq, vec![], []).unwrap());
        let batched = Arc::new(BatchedSearch::new(16));
        let handles: Vec<_> = (0..40)
            .map(|i| {
                let kb = kb.clone();
                let batched = batched.clone();
                std::thread::spawn(move || {
                    let q = HashEmbedder::new(48).embed(&format!("topic {} question", i % 23)).unwrap();
                    let t = if i % 2 == 0 { 0.1 } else { 0.3 };
                    let got = batched.search(&kb, IndexKind::Faq, &q, t, 5).unwrap();
                    let want = DirectSearch.search(&kb, IndexKind::Faq, &q, t, 5).unwrap();
                    assert_eq!(got, want);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
    }

    #[test]
    fn errors_are_forwarded() {
        let kb = Arc::new(KnowledgeBase::empty(4));
        let q = EmbeddingVector::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = BatchedSearch::default();
        assert_eq!(b.search(&kb, IndexKind::Faq, &q, 0.5, 0), Err(IndexError::InvalidTopK));
        assert_eq!(b.search(&kb, IndexKind::Document, &q, 0.5, 3), Ok(vec![]));
    }
}
