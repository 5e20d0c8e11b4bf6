//! Accuracy, mean reciprocal rank, threshold sweeps and per-tier reporting.

use std::collections::BTreeSet;
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::index::{IndexError, Match, VectorIndex};
use crate::model::{AnswerEnvelope, EmbeddingVector, Tier};

/// Fan-out used when sweeping the FAQ threshold.
pub const FAQ_SWEEP_K: usize = 20;
/// Fan-out used when sweeping the document threshold.
pub const DOC_SWEEP_K: usize = 2;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("{0} list is empty")]
    Empty(&'static str),
    #[error("rank must be at least 1 (query {0})")]
    ZeroRank(String),
    #[error("invalid sweep range: {0}")]
    Range(String),
    #[error("{envelopes} envelopes but {judgments} judgments")]
    LengthMismatch { envelopes: usize, judgments: usize },
    #[error("judgment {0} carries no tier")]
    MissingTier(String),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub question_id: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<Tier>,
}

/// Position of the first relevant result, or `Infinite` when none was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rank {
    At(u32),
    Infinite,
}

impl Rank {
    pub fn reciprocal(self) -> f64 {
        match self {
            Rank::At(r) => 1.0 / f64::from(r),
            Rank::Infinite => 0.0,
        }
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rank::At(r) => write!(f, "{r}"),
            Rank::Infinite => f.write_str("inf"),
        }
    }
}

// Serialized as a positive integer, or the string "inf" (null is also read as ∞).
impl Serialize for Rank {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Rank::At(r) => s.serialize_u32(*r),
            Rank::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Rank {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct RankVisitor;

        impl<'de> Visitor<'de> for RankVisitor {
            type Value = Rank;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive integer, \"inf\" or null")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Rank, E> {
                match u32::try_from(v) {
                    Ok(0) => Err(E::custom("rank must be at least 1")),
                    Ok(r) => Ok(Rank::At(r)),
                    Err(_) => Err(E::custom("rank too large")),
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Rank, E> {
                u64::try_from(v)
                    .map_err(|_| E::custom("rank must be at least 1"))
                    .and_then(|v| self.visit_u64(v))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Rank, E> {
                match v.to_ascii_lowercase().as_str() {
                    "inf" | "infinity" | "∞" => Ok(Rank::Infinite),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }

            fn visit_unit<E: de::Error>(self) -> Result<Rank, E> {
                Ok(Rank::Infinite)
            }

            fn visit_none<E: de::Error>(self) -> Result<Rank, E> {
                Ok(Rank::Infinite)
            }
        }

        d.deserialize_any(RankVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub rank_of_first_relevant: Rank,
}

/// Share of judgments marked correct.
pub fn accuracy(judgments: &[Judgment]) -> Result<f64, EvalError> {
    if judgments.is_empty() {
        return Err(EvalError::Empty("judgment"));
    }
    let correct = judgments.iter().filter(|j| j.correct).count();
    Ok(correct as f64 / judgments.len() as f64)
}

/// Mean of `1 / rank`, with an infinite rank contributing 0.
pub fn mrr(results: &[RankedResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty("ranked result"));
    }
    let mut sum = 0.0;
    for r in results {
        if r.rank_of_first_relevant == Rank::At(0) {
            return Err(EvalError::ZeroRank(r.query_id.clone()));
        }
        sum += r.rank_of_first_relevant.reciprocal();
    }
    Ok(sum / results.len() as f64)
}

/// A sweep query and the index keys that count as relevant for it.
///
/// An empty `relevant` set marks a query the swept tier should not answer:
/// it ranks 1 when the search comes back empty and ∞ otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub id: String,
    pub vector: EmbeddingVector,
    pub relevant: BTreeSet<String>,
}

pub fn rank_of_first_relevant(matches: &[Match], relevant: &BTreeSet<String>) -> Rank {
    if relevant.is_empty() {
        return if matches.is_empty() { Rank::At(1) } else { Rank::Infinite };
    }
    matches
        .iter()
        .position(|m| relevant.contains(&m.key))
        .map_or(Rank::Infinite, |p| Rank::At(p as u32 + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRange {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Default for SweepRange {
    fn default() -> Self {
        Self { start: 0.80, end: 0.95, step: 0.01 }
    }
}

impl SweepRange {
    /// Evaluation points from `start` to `end` inclusive, rounded to 1e-9 so
    /// that accumulated step error never adds or drops a point.
    pub fn thresholds(&self) -> Result<Vec<f64>, EvalError> {
        let SweepRange { start, end, step } = *self;
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || start > end {
            return Err(EvalError::Range(format!("[{start}, {end}] must lie within [0, 1]")));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(EvalError::Range(format!("step {step} must be positive")));
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        Ok((0..=n)
            .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub best_t: f64,
    pub best_mrr: f64,
    pub top_k: usize,
    pub curve: Vec<SweepPoint>,
}

/// MRR at every threshold of `range`; `best_t` is the smallest threshold
/// reaching the maximum.
///
/// Each query is searched once at the lowest threshold. Raising the threshold
/// only trims the tail of a best-first list, so every other point is a prefix
/// of that result.
pub fn sweep_threshold(
    index: &VectorIndex,
    queries: &[LabeledQuery],
    range: SweepRange,
    top_k: usize,
) -> Result<SweepOutcome, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::Empty("labeled query"));
    }
    let thresholds = range.thresholds()?;
    let refs: Vec<&[f32]> = queries.iter().map(|q| q.vector.as_slice()).collect();
    let base = index.search_batch(&refs, thresholds[0], top_k)?;

    let curve: Vec<SweepPoint> = thresholds
        .iter()
        .map(|&t| {
            let sum: f64 = queries
                .iter()
                .zip(&base)
                .map(|(q, matches)| {
                    let kept = matches.iter().take_while(|m| m.score >= t).count();
                    rank_of_first_relevant(&matches[..kept], &q.relevant).reciprocal()
                })
                .sum();
            SweepPoint { threshold: t, mrr: sum / queries.len() as f64 }
        })
        .collect();

    let best = curve
        .iter()
        .fold(curve[0], |best, p| if p.mrr > best.mrr { *p } else { best });
    Ok(SweepOutcome { best_t: best.threshold, best_mrr: best.mrr, top_k, curve })
}

pub fn sweep_faq_threshold(
    index: &VectorIndex,
    queries: &[LabeledQuery],
    range: SweepRange,
) -> Result<SweepOutcome, EvalError> {
    sweep_threshold(index, queries, range, FAQ_SWEEP_K)
}

pub fn sweep_doc_threshold(
    index: &VectorIndex,
    queries: &[LabeledQuery],
    range: SweepRange,
) -> Result<SweepOutcome, EvalError> {
    sweep_threshold(index, queries, range, DOC_SWEEP_K)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCounts {
    pub total: u64,
    pub correct: u64,
}

impl TierCounts {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierReport {
    pub faq: TierCounts,
    pub document: TierCounts,
    pub fallback: TierCounts,
}

impl TierReport {
    pub fn get(&self, tier: Tier) -> TierCounts {
        match tier {
            Tier::Faq => self.faq,
            Tier::Document => self.document,
            Tier::Fallback => self.fallback,
        }
    }

    fn slot(&mut self, tier: Tier) -> &mut TierCounts {
        match tier {
            Tier::Faq => &mut self.faq,
            Tier::Document => &mut self.document,
            Tier::Fallback => &mut self.fallback,
        }
    }

    pub fn record(&mut self, tier: Tier, correct: bool) {
        let slot = self.slot(tier);
        slot.total += 1;
        slot.correct += u64::from(correct);
    }

    pub fn total(&self) -> u64 {
        Tier::ALL.iter().map(|&t| self.get(t).total).sum()
    }

    pub fn correct(&self) -> u64 {
        Tier::ALL.iter().map(|&t| self.get(t).correct).sum()
    }

    /// Report over judgments that each carry the tier that answered them.
    pub fn from_tagged(judgments: &[Judgment]) -> Result<Self, EvalError> {
        let mut report = Self::default();
        for j in judgments {
            let tier = j.tier.ok_or_else(|| EvalError::MissingTier(j.question_id.clone()))?;
            report.record(tier, j.correct);
        }
        Ok(report)
    }

    /// Plain-text table, one row per tier plus a total row.
    pub fn table(&self) -> String {
        let mut out = format!("{:<10} {:>7} {:>7} {:>9}\n", "tier", "total", "correct", "accuracy");
        let row = |name: &str, c: TierCounts| {
            let acc = c.accuracy().map_or_else(|| "-".to_owned(), |a| format!("{a:.3}"));
            format!("{:<10} {:>7} {:>7} {:>9}\n", name, c.total, c.correct, acc)
        };
        for tier in Tier::ALL {
            out.push_str(&row(tier.as_str(), self.get(tier)));
        }
        out.push_str(&row("all", TierCounts { total: self.total(), correct: self.correct() }));
        out
    }
}

/// Pairs each envelope with the judgment at the same position.
pub fn tier_report(envelopes: &[AnswerEnvelope], judgments: &[Judgment]) -> Result<TierReport, EvalError> {
    if envelopes.len() != judgments.len() {
        return Err(EvalError::LengthMismatch { envelopes: envelopes.len(), judgments: judgments.len() });
    }
    let mut report = TierReport::default();
    for (env, j) in envelopes.iter().zip(judgments) {
        report.record(env.tier, j.correct);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::IndexEntry;
    use proptest::prelude::*;

    fn judgments(correct: usize, n: usize) -> Vec<Judgment> {
        (0..n)
            .map(|i| Judgment { question_id: format!("q{i}"), correct: i < correct, tier: None })
            .collect()
    }

    fn ranked(ranks: &[Rank]) -> Vec<RankedResult> {
        ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| RankedResult { query_id: format!("q{i}"), rank_of_first_relevant: r })
            .collect()
    }

    #[test]
    fn accuracy_counts_correct_share() {
        assert_eq!(accuracy(&judgments(500, 500)), Ok(1.0));
        assert_eq!(accuracy(&judgments(314, 500)), Ok(0.628));
        assert_eq!(accuracy(&judgments(272, 500)), Ok(0.544));
        assert_eq!(accuracy(&[]), Err(EvalError::Empty("judgment")));
    }

    #[test]
    fn mrr_examples() {
        assert_eq!(mrr(&ranked(&[Rank::At(1); 4])), Ok(1.0));
        assert_eq!(mrr(&ranked(&[Rank::Infinite; 3])), Ok(0.0));
        let m = mrr(&ranked(&[Rank::At(1), Rank::At(2), Rank::Infinite])).unwrap();
        assert!((m - 0.5).abs() < 1e-12);
        assert!(matches!(mrr(&ranked(&[Rank::At(0)])), Err(EvalError::ZeroRank(_))));
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn rank_serde_forms() {
        let r: RankedResult = serde_json::from_str(r#"{"query_id":"a","rank_of_first_relevant":3}"#).unwrap();
        assert_eq!(r.rank_of_first_relevant, Rank::At(3));
        for inf in [r#""inf""#, "null", r#""∞""#] {
            let s = format!(r#"{{"query_id":"a","rank_of_first_relevant":{inf}}}"#);
            let r: RankedResult = serde_json::from_str(&s).unwrap();
            assert_eq!(r.rank_of_first_relevant, Rank::Infinite);
        }
        assert!(serde_json::from_str::<Rank>("0").is_err());
        assert!(serde_json::from_str::<Rank>("-2").is_err());
        assert_eq!(serde_json::to_string(&Rank::Infinite).unwrap(), r#""inf""#);
        assert_eq!(serde_json::to_string(&Rank::At(7)).unwrap(), "7");
    }

    #[test]
    fn default_range_has_sixteen_points() {
        let t = SweepRange::default().thresholds().unwrap();
        assert_eq!(t.len(), 16);
        assert_eq!(t[0], 0.8);
        assert_eq!(t[15], 0.95);
        assert!(SweepRange { start: 0.9, end: 0.8, step: 0.01 }.thresholds().is_err());
        assert!(SweepRange { start: 0.8, end: 0.9, step: 0.0 }.thresholds().is_err());
        assert!(SweepRange { start: 0.8, end: 1.2, step: 0.1 }.thresholds().is_err());
    }

    /// Unit vector in `dim` dimensions with cosine `c` to axis `a` and the
    /// remainder along axis `b`.
    fn at_cosine(dim: usize, a: usize, b: usize, c: f64) -> Vec<f32> {
        let mut v = vec![0f32; dim];
        v[a] = c as f32;
        v[b] = (1.0 - c * c).sqrt() as f32;
        v
    }

    fn axis(dim: usize, a: usize) -> EmbeddingVector {
        let mut v = vec![0f32; dim];
        v[a] = 1.0;
        EmbeddingVector::new(v).unwrap()
    }

    fn oracle_curve(index: &VectorIndex, queries: &[LabeledQuery], range: SweepRange, k: usize) -> Vec<SweepPoint> {
        range
            .thresholds()
            .unwrap()
            .into_iter()
            .map(|t| {
                let ranks: Vec<RankedResult> = queries
                    .iter()
                    .map(|q| {
                        let m = index.search(q.vector.as_slice(), t, k).unwrap();
                        RankedResult { query_id: q.id.clone(), rank_of_first_relevant: rank_of_first_relevant(&m, &q.relevant) }
                    })
                    .collect();
                SweepPoint { threshold: t, mrr: mrr(&ranks).unwrap() }
            })
            .collect()
    }

    #[test]
    fn exact_hits_give_flat_curve_at_range_start() {
        let dim = 8;
        let index = VectorIndex::build(dim, (0..4).map(|i| IndexEntry::new(format!("k{i}"), axis(dim, i)))).unwrap();
        let queries: Vec<LabeledQuery> = (0..4)
            .map(|i| LabeledQuery { id: format!("q{i}"), vector: axis(dim, i), relevant: [format!("k{i}")].into() })
            .collect();
        let out = sweep_faq_threshold(&index, &queries, SweepRange::default()).unwrap();
        assert!(out.curve.iter().all(|p| p.mrr == 1.0));
        assert_eq!(out.best_t, 0.8);
    }

    #[test]
    fn relevant_below_distractor_peaks_at_range_start() {
        // Relevant item at 0.85, distractor at 0.95: rank 2 until 0.85, then nothing relevant.
        let dim = 16;
        let index = VectorIndex::build(
            dim,
            [IndexEntry::new("rel", axis(dim, 0)), IndexEntry::new("dis", axis(dim, 1))],
        )
        .unwrap();
        let mut q = vec![0f32; dim];
        q[0] = 0.85;
        q[1] = 0.95;
        let queries = vec![LabeledQuery {
            id: "q".into(),
            vector: EmbeddingVector::new(q).unwrap(),
            relevant: ["rel".to_owned()].into(),
        }];
        let out = sweep_faq_threshold(&index, &queries, SweepRange::default()).unwrap();
        assert_eq!(out.curve, oracle_curve(&index, &queries, SweepRange::default(), FAQ_SWEEP_K));
        assert_eq!(out.best_t, 0.8);
    }

    #[test]
    fn abstention_labels_reward_thresholds_between_groups() {
        let dim = 64;
        let mut entries = Vec::new();
        let mut queries = Vec::new();
        for i in 0..10 {
            entries.push(IndexEntry::new(format!("pos{i:02}"), axis(dim, i)));
            queries.push(LabeledQuery {
                id: format!("p{i}"),
                vector: EmbeddingVector::new(at_cosine(dim, i, 40 + i, 0.928)).unwrap(),
                relevant: [format!("pos{i:02}")].into(),
            });
        }
        for i in 10..20 {
            entries.push(IndexEntry::new(format!("neg{i:02}"), axis(dim, i)));
            queries.push(LabeledQuery {
                id: format!("n{i}"),
                vector: EmbeddingVector::new(at_cosine(dim, i, 40 + i, 0.882)).unwrap(),
                relevant: BTreeSet::new(),
            });
        }
        let index = VectorIndex::build(dim, entries).unwrap();
        let out = sweep_faq_threshold(&index, &queries, SweepRange::default()).unwrap();
        assert_eq!(out.curve, oracle_curve(&index, &queries, SweepRange::default(), FAQ_SWEEP_K));
        assert!(out.best_t > 0.88 && out.best_t <= 0.93, "best_t {}", out.best_t);
        assert_eq!(out.best_mrr, 1.0);
    }

    #[test]
    fn tier_report_counts_and_table() {
        let report = TierReport::default();
        assert_eq!(report.total(), 0);
        let tagged: Vec<Judgment> = [(Tier::Faq, true), (Tier::Faq, false), (Tier::Fallback, true)]
            .iter()
            .enumerate()
            .map(|(i, &(t, c))| Judgment { question_id: i.to_string(), correct: c, tier: Some(t) })
            .collect();
        let r = TierReport::from_tagged(&tagged).unwrap();
        assert_eq!(r.faq, TierCounts { total: 2, correct: 1 });
        assert_eq!(r.fallback, TierCounts { total: 1, correct: 1 });
        assert_eq!(r.document, TierCounts::default());
        assert!(r.table().contains("faq"));
        assert!(matches!(TierReport::from_tagged(&judgments(1, 1)), Err(EvalError::MissingTier(_))));
    }

    fn tier_strategy() -> impl Strategy<Value = Tier> {
        prop_oneof![Just(Tier::Faq), Just(Tier::Document), Just(Tier::Fallback)]
    }

    proptest! {
        #[test]
        fn tier_totals_are_conserved(log in proptest::collection::vec((tier_strategy(), any::<bool>()), 0..200)) {
            let envs: Vec<AnswerEnvelope> = log.iter().map(|&(tier, _)| AnswerEnvelope {
                query: "q".into(), answer_text: "a".into(), tier, matches: vec![], disclaimer_applied: None, latency_ms: 0.0,
            }).collect();
            let js: Vec<Judgment> = log.iter().enumerate()
                .map(|(i, &(_, c))| Judgment { question_id: i.to_string(), correct: c, tier: None }).collect();
            let r = tier_report(&envs, &js).unwrap();
            prop_assert_eq!(r.total(), log.len() as u64);
            prop_assert_eq!(r.correct(), log.iter().filter(|x| x.1).count() as u64);
        }

        #[test]
        fn metrics_are_permutation_invariant(ranks in proptest::collection::vec(prop_oneof![(1u32..30).prop_map(Rank::At), Just(Rank::Infinite)], 1..50), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = ranks.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = mrr(&ranked(&ranks)).unwrap();
            let b = mrr(&ranked(&shuffled)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn mrr_does_not_rise_when_a_rank_worsens(ranks in proptest::collection::vec(1u32..30, 1..50), which in any::<proptest::sample::Index>(), by in 1u32..10) {
            let before: Vec<Rank> = ranks.iter().map(|&r| Rank::At(r)).collect();
            let mut after = before.clone();
            let i = which.index(after.len());
            after[i] = Rank::At(ranks[i] + by);
            prop_assert!(mrr(&ranked(&after)).unwrap() <= mrr(&ranked(&before)).unwrap());
            after[i] = Rank::Infinite;
            prop_assert!(mrr(&ranked(&after)).unwrap() <= mrr(&ranked(&before)).unwrap());
        }

        #[test]
        fn sweep_matches_oracle_on_random_data(seed in any::<u64>(), k in 1usize..6) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dim = 6;
            let entries: Vec<IndexEntry> = (0..30).map(|i| {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                IndexEntry::new(format!("e{i:02}"), EmbeddingVector::new(v).unwrap())
            }).collect();
            let index = VectorIndex::build(dim, entries).unwrap();
            let queries: Vec<LabeledQuery> = (0..12).map(|i| {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let relevant: BTreeSet<String> = (0..rng.random_range(0..4)).map(|_| format!("e{:02}", rng.random_range(0..30))).collect();
                LabeledQuery { id: format!("q{i}"), vector: EmbeddingVector::new(v).unwrap(), relevant }
            }).collect();
            let range = SweepRange { start: 0.0, end: 0.9, step: 0.05 };
            let out = sweep_threshold(&index, &queries, range, k).unwrap();
            prop_assert_eq!(&out.curve, &oracle_curve(&index, &queries, range, k));
            let max = out.curve.iter().map(|p| p.mrr).fold(f64::MIN, f64::max);
            prop_assert_eq!(out.best_mrr, max);
            let first = out.curve.iter().find(|p| p.mrr == max).unwrap();
            prop_assert_eq!(out.best_t, first.threshold);
        }
    }
}
