//! Deterministic offline providers.
//!
//! [`HashEmbedder`] projects hashed character trigrams and word tokens into
//! m dimensions. [`MockLlm`] understands the default pipeline prompts and
//! produces plausible, reproducible outputs so that the preparation
//! pipelines and the router can run end to end without a model.

use super::{Embedder, EmbedderSpec, Generator, GeneratorSpec, ProviderError};
use crate::chunker::split_sentences;
use crate::model::EmbeddingVector;
use crate::prompts::{line_value, section};

pub const DEFAULT_SEED: u64 = 0x5eed_0f_1a6;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn feature_hash(seed: u64, kind: u8, bytes: &[u8]) -> u64 {
    // FNV-1a, then a splitmix finalizer so that low bits are well mixed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    h = (h ^ u64::from(kind)).wrapping_mul(0x0100_0000_01b3);
    for &b in bytes {
        h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h)
}

/// Seeded feature-hashing embedder.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    spec: EmbedderSpec,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self::with_spec(
            EmbedderSpec {
                dimension,
                ..EmbedderSpec::default()
            },
            DEFAULT_SEED,
        )
    }

    pub fn with_spec(spec: EmbedderSpec, seed: u64) -> Self {
        assert!(spec.dimension >= 2, "embedding dimension must be at least 2");
        Self { spec, seed }
    }

    fn raw(&self, text: &str) -> Vec<f32> {
        let m = self.spec.dimension as u64;
        let mut v = vec![0f32; self.spec.dimension];
        let mut add = |h: u64, w: f32| {
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[((h >> 1) % m) as usize] += sign * w;
        };

        let lower = text.to_lowercase();
        let chars: Vec<char> = std::iter::once('\u{2}')
            .chain(lower.chars())
            .chain(std::iter::once('\u{3}'))
            .collect();
        let mut buf = [0u8; 12];
        for window in chars.windows(3) {
            let mut len = 0;
            for c in window {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            add(feature_hash(self.seed, 3, &buf[..len]), 0.5);
        }
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            add(feature_hash(self.seed, 1, word.as_bytes()), 1.0);
        }
        if v.iter().all(|&x| x == 0.0) {
            let h = feature_hash(self.seed, 0, lower.as_bytes());
            v[(h % m) as usize] = 1.0;
        }
        v
    }
}

impl Embedder for HashEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let mut v = self.raw(text);
        if self.spec.normalizes {
            normalize(&mut v);
        }
        EmbeddingVector::new(v).map_err(|e| ProviderError::InvalidResponse(e.to_string()))
    }
}

fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
}

/// Returns fixed vectors for texts containing a keyword and defers to a
/// [`HashEmbedder`] otherwise. Rules are checked in insertion order.
#[derive(Debug, Clone)]
pub struct KeywordEmbedder {
    rules: Vec<(String, Vec<f32>)>,
    fallback: HashEmbedder,
}

impl KeywordEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            rules: Vec::new(),
            fallback: HashEmbedder::new(dimension),
        }
    }

    pub fn rule(mut self, keyword: impl Into<String>, vector: Vec<f32>) -> Self {
        assert_eq!(vector.len(), self.fallback.spec.dimension, "rule vector has wrong dimension");
        self.rules.push((keyword.into(), vector));
        self
    }
}

impl Embedder for KeywordEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        self.fallback.spec()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        match self.rules.iter().find(|(k, _)| text.contains(k.as_str())) {
            Some((_, v)) => {
                let mut v = v.clone();
                normalize(&mut v);
                EmbeddingVector::new(v).map_err(|e| ProviderError::InvalidResponse(e.to_string()))
            }
            None => self.fallback.embed(text),
        }
    }
}

/// An embedder that is always down.
#[derive(Debug, Clone, Default)]
pub struct FailingEmbedder {
    spec: EmbedderSpec,
}

impl FailingEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            spec: EmbedderSpec { dimension, ..EmbedderSpec::default() },
        }
    }
}

impl Embedder for FailingEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed(&self, _: &str) -> Result<EmbeddingVector, ProviderError> {
        Err(ProviderError::Unreachable("embedder offline".into()))
    }
}

/// Returns the prompt unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoGenerator;

impl Generator for EchoGenerator {
    fn name(&self) -> &str {
        "echo"
    }

    fn generate(&self, prompt: &str, _: &GeneratorSpec) -> Result<String, ProviderError> {
        if prompt.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        Ok(prompt.to_owned())
    }
}

/// A generator that is always down.
#[derive(Debug, Clone, Copy, Default)]
pub struct FailingGenerator;

impl Generator for FailingGenerator {
    fn name(&self) -> &str {
        "failing"
    }

    fn generate(&self, _: &str, _: &GeneratorSpec) -> Result<String, ProviderError> {
        Err(ProviderError::Unreachable("generator offline".into()))
    }
}

#[derive(Debug, Clone)]
enum Reply {
    Text(String),
    Fail,
    Echo,
}

/// Pattern → response rules; the first rule whose pattern occurs in the
/// prompt wins, otherwise the default reply applies (echo unless changed).
#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    rules: Vec<(String, Reply)>,
    otherwise: Reply,
}

impl Default for ScriptedGenerator {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedGenerator {
    pub fn new() -> Self {
        Self {
            rules: Vec::new(),
            otherwise: Reply::Echo,
        }
    }

    /// Answers every prompt with `text`.
    pub fn fixed(text: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            otherwise: Reply::Text(text.into()),
        }
    }

    pub fn when(mut self, pattern: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push((pattern.into(), Reply::Text(response.into())));
        self
    }

    pub fn fail_when(mut self, pattern: impl Into<String>) -> Self {
        self.rules.push((pattern.into(), Reply::Fail));
        self
    }

    pub fn otherwise_fail(mut self) -> Self {
        self.otherwise = Reply::Fail;
        self
    }

    pub fn otherwise(mut self, text: impl Into<String>) -> Self {
        self.otherwise = Reply::Text(text.into());
        self
    }
}

impl Generator for ScriptedGenerator {
    fn name(&self) -> &str {
        "scripted"
    }

    fn generate(&self, prompt: &str, _: &GeneratorSpec) -> Result<String, ProviderError> {
        if prompt.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let reply = self
            .rules
            .iter()
            .find(|(p, _)| prompt.contains(p.as_str()))
            .map(|(_, r)| r)
            .unwrap_or(&self.otherwise);
        match reply {
            Reply::Text(t) => Ok(t.clone()),
            Reply::Echo => Ok(prompt.to_owned()),
            Reply::Fail => Err(ProviderError::Unreachable("scripted failure".into())),
        }
    }
}

/// Generator backed by a closure.
pub struct FnGenerator<F> {
    f: F,
}

impl<F> FnGenerator<F>
where
    F: Fn(&str) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> Generator for FnGenerator<F>
where
    F: Fn(&str) -> Result<String, ProviderError> + Send + Sync,
{
    fn name(&self) -> &str {
        "fn"
    }

    fn generate(&self, prompt: &str, _: &GeneratorSpec) -> Result<String, ProviderError> {
        (self.f)(prompt)
    }
}

const PARAPHRASE_FRAMES: &[&str] = &[
    "Could you tell me {q}?",
    "Please explain {q}.",
    "I would like to know {q}.",
    "Quick question: {q}?",
    "Can you help me understand {q}?",
    "Do you know {q}?",
    "I'm wondering {q}.",
    "Tell me {q}.",
    "Any information on {q}?",
    "Help: {q}?",
    "Could someone clarify {q}?",
    "I need to find out {q}.",
    "Would you explain {q}?",
    "May I ask {q}?",
    "Let me know {q}.",
    "I'd appreciate knowing {q}.",
    "Can you clarify {q}?",
    "I'm curious {q}.",
    "Just checking {q}?",
    "Please advise {q}.",
    "Can I ask {q}?",
];

/// Stand-in language model for offline runs.
///
/// Recognises the `TASK:` header of the default pipeline templates and the
/// `PASSAGES:` block of the default answer template; any other prompt is
/// treated as a bare user question.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockLlm;

impl MockLlm {
    fn first_sentence(text: &str) -> Option<String> {
        split_sentences(text).into_iter().next().map(|s| s.text.to_owned())
    }

    fn context(prompt: &str) -> String {
        let title = line_value(prompt, "TITLE:").unwrap_or("").trim_end_matches('.');
        let body = section(prompt, "DOCUMENT:", "END DOCUMENT").unwrap_or("");
        match (title.is_empty(), Self::first_sentence(body)) {
            (false, Some(s)) => format!("{title}: {s}"),
            (true, Some(s)) => s,
            (false, None) => format!("{title}."),
            (true, None) => "General information.".into(),
        }
    }

    fn qa_pairs(text: &str) -> String {
        // Skip the summary line so that questions come from the body.
        let body = text.split_once('\n').map(|(_, b)| b).unwrap_or(text);
        let mut out = String::new();
        for s in split_sentences(body).into_iter().filter(|s| s.text.split_whitespace().count() >= 4).take(3) {
            let topic: Vec<&str> = s
                .text
                .trim_end_matches(['.', '!', '?'])
                .split_whitespace()
                .take(7)
                .collect();
            out.push_str(&format!(
                "Q: What should I know about {}?\nA: {}\n",
                topic.join(" ").to_lowercase(),
                s.text
            ));
        }
        out
    }

    fn paraphrases(prompt: &str) -> String {
        let question = line_value(prompt, "QUESTION:").unwrap_or("");
        let count = prompt
            .split_whitespace()
            .skip_while(|w| *w != "Write")
            .nth(1)
            .and_then(|n| n.parse::<usize>().ok())
            .unwrap_or(3);
        let core = question.trim_end_matches(['?', '.', '!']);
        let mut chars = core.chars();
        let core = match chars.next() {
            Some(c) => c.to_lowercase().chain(chars).collect::<String>(),
            None => return String::new(),
        };
        PARAPHRASE_FRAMES
            .iter()
            .cycle()
            .take(count)
            .map(|f| f.replace("{q}", &core))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn expansions(prompt: &str) -> String {
        let question = line_value(prompt, "QUESTION:").unwrap_or("").trim_end_matches(['?', '.']);
        let answer = section(prompt, "ANSWER:", "END ANSWER").unwrap_or("").trim();
        if question.is_empty() || answer.is_empty() {
            return String::new();
        }
        format!(
            "Q: What are the details regarding: {question}?\nA: {answer}\nQ: Where can I read about: {question}?\nA: {answer}\n"
        )
    }
}

impl Generator for MockLlm {
    fn name(&self) -> &str {
        "mock-llm"
    }

    fn generate(&self, prompt: &str, _: &GeneratorSpec) -> Result<String, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let out = match line_value(prompt, "TASK:") {
            Some("context") => Self::context(prompt),
            Some("rewrite") => section(prompt, "CHUNK:", "END CHUNK").unwrap_or("").trim().to_owned(),
            Some("condense") => {
                let text = section(prompt, "TEXT:", "END TEXT").unwrap_or("");
                Self::first_sentence(text).unwrap_or_default()
            }
            Some("extract_qa") => Self::qa_pairs(section(prompt, "TEXT:", "END TEXT").unwrap_or("")),
            Some("expand_faq") => Self::expansions(prompt),
            Some("paraphrase") => Self::paraphrases(prompt),
            _ if prompt.contains("PASSAGES:") => {
                let passages = prompt.split_once("PASSAGES:").map(|(_, p)| p).unwrap_or("");
                let lead = passages
                    .lines()
                    .map(|l| l.trim().trim_start_matches(|c: char| c == '[' || c.is_ascii_digit() || c == ']').trim())
                    .find(|l| !l.is_empty())
                    .unwrap_or("the retrieved passages");
                format!("According to the reference material: {lead}")
            }
            _ => format!(
                "I do not have verified information about \"{}\".",
                prompt.trim()
            ),
        };
        if out.trim().is_empty() {
            return Err(ProviderError::InvalidResponse("empty mock output".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::PromptTemplates;
    use crate::providers::{parse_structured, Record, SchemaHint};
    use proptest::prelude::*;

    #[test]
    fn hash_embedder_is_deterministic() {
        let e = HashEmbedder::new(64);
        assert_eq!(e.embed("abc").unwrap(), e.embed("abc").unwrap());
        assert_eq!(e.embed("abc").unwrap().dim(), 64);
    }

    #[test]
    fn hash_embedder_is_unit_norm() {
        let e = HashEmbedder::new(32);
        for t in ["a", "abc", "Tuition fees are due in June.", "ø", "🦀🦀"] {
            assert!((e.embed(t).unwrap().l2_norm() - 1.0).abs() < 1e-6, "{t}");
        }
    }

    #[test]
    fn hash_embedder_rejects_empty_text() {
        assert_eq!(HashEmbedder::new(8).embed("  ").unwrap_err(), ProviderError::EmptyInput);
    }

    #[test]
    fn hash_embedder_collisions_on_distinct_strings() {
        let e = HashEmbedder::new(64);
        let texts: Vec<String> = (0..100).map(|i| format!("sample question number {i}")).collect();
        let vecs: Vec<_> = texts.iter().map(|t| e.embed(t).unwrap()).collect();
        let mut collisions = 0;
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                if vecs[i] == vecs[j] {
                    collisions += 1;
                }
            }
        }
        assert!(collisions <= 1, "{collisions} identical pairs");
    }

    #[test]
    fn similar_texts_score_higher_than_unrelated() {
        let e = HashEmbedder::new(256);
        let dot = |a: &str, b: &str| {
            let (a, b) = (e.embed(a).unwrap(), e.embed(b).unwrap());
            a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum::<f32>()
        };
        let close = dot("What is the tuition fee?", "what is the tuition fee");
        let far = dot("What is the tuition fee?", "Dormitory rooms open in August.");
        assert!(close > 0.9 && far < 0.5, "{close} {far}");
    }

    #[test]
    fn scripted_and_echo_generators() {
        let spec = GeneratorSpec::default();
        let g = ScriptedGenerator::new().when("CONTEXT:", "CTX");
        assert_eq!(g.generate("xx CONTEXT: yy", &spec).unwrap(), "CTX");
        assert_eq!(g.generate("plain", &spec).unwrap(), "plain");
        assert_eq!(EchoGenerator.generate("verbatim prompt", &spec).unwrap(), "verbatim prompt");
        assert!(ScriptedGenerator::new().otherwise_fail().generate("x", &spec).is_err());
    }

    #[test]
    fn mock_llm_follows_pipeline_prompts() {
        let t = PromptTemplates::default();
        let spec = GeneratorSpec::default();
        let ctx = MockLlm.generate(&t.context("Fees", "Tuition is 10 units. It is due in June."), &spec).unwrap();
        assert_eq!(ctx, "Fees: Tuition is 10 units.");
        let rw = MockLlm.generate(&t.rewrite("ctx", "  The chunk.  "), &spec).unwrap();
        assert_eq!(rw, "The chunk.");
        let h = MockLlm.generate(&t.condense("First one. Second one."), &spec).unwrap();
        assert_eq!(h, "First one.");

        let qa = MockLlm
            .generate(&t.extract_qa("Summary.\nStudents must register before June. Fees are paid online each term."), &spec)
            .unwrap();
        let parsed = parse_structured(&qa, SchemaHint::QaPairs).unwrap();
        assert_eq!(parsed.len(), 2);

        let para = MockLlm.generate(&t.paraphrase("What is the fee?", 19), &spec).unwrap();
        let lines = parse_structured(&para, SchemaHint::Paraphrases).unwrap();
        assert_eq!(lines.len(), 19);
        let distinct: std::collections::HashSet<_> = lines
            .iter()
            .map(|r| match r {
                Record::Text(t) => crate::model::normalize_question(t),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(distinct.len(), 19);

        let fb = MockLlm.generate("who won the match?", &spec).unwrap();
        assert!(fb.contains("who won the match?"));
    }

    proptest! {
        #[test]
        fn hash_embedder_is_pure(s in "\\PC{1,40}") {
            prop_assume!(!s.trim().is_empty());
            let a = HashEmbedder::new(48);
            let b = HashEmbedder::new(48);
            let va = a.embed(&s).unwrap();
            prop_assert_eq!(va.dim(), 48);
            prop_assert_eq!(&va, &b.embed(&s).unwrap());
            prop_assert!((va.l2_norm() - 1.0).abs() < 1e-5);
        }
    }
}
