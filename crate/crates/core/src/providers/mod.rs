//! Embedding and generation providers.
//!
//! Everything upstream talks to [`Embedder`] and [`Generator`] trait objects.
//! [`mock`] holds deterministic offline implementations, [`remote`] an
//! OpenAI-compatible HTTP client, [`structured`] the line-tagged output
//! format used for multi-item generations.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use crate::model::{EmbeddingVector, Purpose};

pub mod mock;
pub mod remote;
pub mod structured;

pub use structured::{generate_structured, parse_structured, Record, SchemaHint};

pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ProviderError {
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("embedding has {got} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("prompt exceeds the model's token limit")]
    TokenLimitExceeded,
    #[error("empty input text")]
    EmptyInput,
    #[error("could not parse structured output: {0}")]
    Parse(String),
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderSpec {
    pub name: String,
    pub dimension: usize,
    /// Whether emitted vectors are unit length.
    pub normalizes: bool,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self {
            name: "hash-ngram".to_owned(),
            dimension: 384,
            normalizes: true,
        }
    }
}

impl EmbedderSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.dimension < 2 {
            return Err(format!("embedding dimension {} is below 2", self.dimension));
        }
        Ok(())
    }
}

/// Sampling parameters passed with every generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_new_tokens: u32,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            name: "default".to_owned(),
            temperature: 0.9,
            top_p: 0.95,
            top_k: 40,
            max_new_tokens: 512,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err(format!("top_p {} outside [0, 1]", self.top_p));
        }
        if self.max_new_tokens == 0 {
            return Err("max_new_tokens must be at least 1".to_owned());
        }
        Ok(())
    }
}

/// Maps text to an m-dimensional vector.
pub trait Embedder: Send + Sync {
    fn spec(&self) -> &EmbedderSpec;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }

    fn dimension(&self) -> usize {
        self.spec().dimension
    }
}

/// Maps a prompt to a response.
pub trait Generator: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, prompt: &str, spec: &GeneratorSpec) -> Result<String, ProviderError>;
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn spec(&self) -> &EmbedderSpec {
        (**self).spec()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        (**self).embed_batch(texts)
    }
}

impl<G: Generator + ?Sized> Generator for Arc<G> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn generate(&self, prompt: &str, spec: &GeneratorSpec) -> Result<String, ProviderError> {
        (**self).generate(prompt, spec)
    }
}

/// Embeds `text` and checks the result against an index dimension.
pub fn embed_checked(
    embedder: &dyn Embedder,
    text: &str,
    expected_dim: usize,
) -> Result<EmbeddingVector, ProviderError> {
    let v = embedder.embed(text)?;
    if v.dim() != expected_dim {
        return Err(ProviderError::DimensionMismatch {
            expected: expected_dim,
            got: v.dim(),
        });
    }
    Ok(v)
}

/// Wraps a provider and counts calls; generator prompts are kept in order.
pub struct Counted<P> {
    inner: P,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl<P> Counted<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log poisoned").clone()
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.prompts.lock().expect("prompt log poisoned").clear();
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: Generator> Generator for Counted<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn generate(&self, prompt: &str, spec: &GeneratorSpec) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts
            .lock()
            .expect("prompt log poisoned")
            .push(prompt.to_owned());
        self.inner.generate(prompt, spec)
    }
}

impl<P: Embedder> Embedder for Counted<P> {
    fn spec(&self) -> &EmbedderSpec {
        self.inner.spec()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(text)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.calls.fetch_add(texts.len(), Ordering::SeqCst);
        self.inner.embed_batch(texts)
    }
}

/// Counting semaphore shared by the providers of one process.
#[derive(Debug)]
pub struct InFlightLimit {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    pub fn new(cap: usize) -> Arc<Self> {
        Arc::new(Self {
            cap: cap.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        })
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn in_flight(&self) -> usize {
        *self.used.lock().expect("limit poisoned")
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("limit poisoned");
        while *used >= self.cap {
            used = self.freed.wait(used).expect("limit poisoned");
        }
        *used += 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a InFlightLimit);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().expect("limit poisoned");
        *used -= 1;
        self.0.freed.notify_one();
    }
}

/// Caps the number of concurrent calls into the wrapped provider.
pub struct Limited<P> {
    inner: P,
    limit: Arc<InFlightLimit>,
}

impl<P> Limited<P> {
    pub fn new(inner: P, limit: Arc<InFlightLimit>) -> Self {
        Self { inner, limit }
    }
}

impl<P: Generator> Generator for Limited<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn generate(&self, prompt: &str, spec: &GeneratorSpec) -> Result<String, ProviderError> {
        let _permit = self.limit.acquire();
        self.inner.generate(prompt, spec)
    }
}

impl<P: Embedder> Embedder for Limited<P> {
    fn spec(&self) -> &EmbedderSpec {
        self.inner.spec()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let _permit = self.limit.acquire();
        self.inner.embed(text)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let _permit = self.limit.acquire();
        self.inner.embed_batch(texts)
    }
}

/// One default generator plus optional per-purpose overrides.
#[derive(Clone)]
pub struct GeneratorSet {
    default: Arc<dyn Generator>,
    overrides: HashMap<Purpose, Arc<dyn Generator>>,
}

impl GeneratorSet {
    pub fn new(default: Arc<dyn Generator>) -> Self {
        Self {
            default,
            overrides: HashMap::new(),
        }
    }

    pub fn with_override(mut self, purpose: Purpose, generator: Arc<dyn Generator>) -> Self {
        self.overrides.insert(purpose, generator);
        self
    }

    pub fn get(&self, purpose: Purpose) -> &dyn Generator {
        self.overrides
            .get(&purpose)
            .map(|g| g.as_ref())
            .unwrap_or(self.default.as_ref())
    }
}

impl<G: Generator + 'static> From<Arc<G>> for GeneratorSet {
    fn from(g: Arc<G>) -> Self {
        GeneratorSet::new(g)
    }
}
