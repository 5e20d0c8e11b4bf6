//! HTTP interface.
//!
//! | route | |
//! |---|---|
//! | `POST /v1/chat` | `{"question": "..."}` → answer envelope |
//! | `GET /v1/stats` | counters per day and tier, latency percentiles, document titles |
//! | `GET /v1/health` | readiness |
//! | `POST /v1/admin/reload` | re-read the store and swap the snapshot |
//!
//! Every response body carries `schema_version`. Errors are
//! `{"schema_version": 1, "error": {"code": "...", "message": "..."}}`.

use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, ProviderKind, SnapshotSummary};
use crate::model::{AnswerEnvelope, Tier};
use crate::providers::ProviderError;
use crate::router::RouterError;

pub const SCHEMA_VERSION: u32 = 1;
const LATENCY_WINDOW: usize = 10_000;

#[derive(Debug, Clone, Deserialize)]
pub struct ChatRequest {
    #[serde(default)]
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub id: String,
    pub score: f64,
    pub parent: Option<String>,
    /// Title of the parent document, for chunk sources.
    #[serde(default)]
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub schema_version: u32,
    pub answer: String,
    pub tier: Tier,
    pub sources: Vec<Source>,
    pub disclaimer: Option<String>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub schema_version: u32,
    pub error: ErrorBody,
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    let body = ErrorResponse {
        schema_version: SCHEMA_VERSION,
        error: ErrorBody { code: code.to_owned(), message: message.into() },
    };
    (status, Json(body)).into_response()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: u64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayCount {
    pub date: NaiveDate,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub schema_version: u32,
    pub uptime_secs: f64,
    pub total_requests: u64,
    pub answered: u64,
    pub errors: u64,
    pub per_day: Vec<DayCount>,
    pub per_tier: BTreeMap<Tier, u64>,
    /// Over the most recent answered requests.
    pub latency_ms: LatencySummary,
    pub documents: BTreeMap<String, String>,
    pub snapshot: SnapshotSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub schema_version: u32,
    pub status: String,
    pub indexes_loaded: bool,
    pub embedder: ProviderKind,
    pub generator: ProviderKind,
    pub snapshot: SnapshotSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReloadResponse {
    pub schema_version: u32,
    pub snapshot: SnapshotSummary,
}

/// Process-lifetime counters. All counts only ever grow.
#[derive(Debug)]
pub struct Stats {
    started: Instant,
    total: AtomicU64,
    answered: AtomicU64,
    errors: AtomicU64,
    tiers: [AtomicU64; 3],
    per_day: Mutex<BTreeMap<NaiveDate, u64>>,
    latencies: Mutex<VecDeque<f64>>,
}

impl Default for Stats {
    fn default() -> Self {
        Self {
            started: Instant::now(),
            total: AtomicU64::new(0),
            answered: AtomicU64::new(0),
            errors: AtomicU64::new(0),
            tiers: Default::default(),
            per_day: Mutex::new(BTreeMap::new()),
            latencies: Mutex::new(VecDeque::with_capacity(LATENCY_WINDOW)),
        }
    }
}

fn tier_slot(tier: Tier) -> usize {
    match tier {
        Tier::Faq => 0,
        Tier::Document => 1,
        Tier::Fallback => 2,
    }
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Stats {
    fn request(&self) {
        self.total.fetch_add(1, Ordering::Relaxed);
        *self.per_day.lock().unwrap_or_else(|e| e.into_inner()).entry(Utc::now().date_naive()).or_default() += 1;
    }

    fn answered(&self, tier: Tier, latency_ms: f64) {
        self.answered.fetch_add(1, Ordering::Relaxed);
        self.tiers[tier_slot(tier)].fetch_add(1, Ordering::Relaxed);
        let mut l = self.latencies.lock().unwrap_or_else(|e| e.into_inner());
        if l.len() == LATENCY_WINDOW {
            l.pop_front();
        }
        l.push_back(latency_ms);
    }

    fn failed(&self) {
        self.errors.fetch_add(1, Ordering::Relaxed);
    }

    pub fn latency(&self) -> LatencySummary {
        let mut v: Vec<f64> = self.latencies.lock().unwrap_or_else(|e| e.into_inner()).iter().copied().collect();
        v.sort_by(f64::total_cmp);
        LatencySummary {
            count: v.len() as u64,
            p50: percentile(&v, 50.0),
            p90: percentile(&v, 90.0),
            p95: percentile(&v, 95.0),
            p99: percentile(&v, 99.0),
            max: v.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub stats: Arc<Stats>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>) -> Self {
        Self { engine, stats: Arc::new(Stats::default()) }
    }
}

pub fn app(state: AppState) -> Router {
    Router::new()
        .route("/v1/chat", post(chat))
        .route("/v1/stats", get(stats))
        .route("/v1/health", get(health))
        .route("/v1/admin/reload", post(reload))
        .with_state(state)
}

fn to_response(env: AnswerEnvelope, engine: &Engine) -> ChatResponse {
    let kb = engine.snapshot();
    let sources = env
        .matches
        .into_iter()
        .map(|m| {
            let title = match env.tier {
                Tier::Document => m.parent.as_deref().and_then(|p| kb.titles().get(p).cloned()),
                _ => None,
            };
            Source { id: m.id, score: m.score, parent: m.parent, title }
        })
        .collect();
    ChatResponse {
        schema_version: SCHEMA_VERSION,
        answer: env.answer_text,
        tier: env.tier,
        sources,
        disclaimer: env.disclaimer_applied,
        latency_ms: env.latency_ms,
    }
}

async fn chat(State(state): State<AppState>, body: Bytes) -> Response {
    let started = Instant::now();
    state.stats.request();
    let question = match serde_json::from_slice::<ChatRequest>(&body) {
        Ok(r) if !r.question.trim().is_empty() => r.question,
        Ok(_) => {
            state.stats.failed();
            return error(StatusCode::BAD_REQUEST, "empty_question", "question is empty");
        }
        Err(e) => {
            state.stats.failed();
            return error(StatusCode::BAD_REQUEST, "bad_request", format!("expected {{\"question\": \"...\"}}: {e}"));
        }
    };
    let engine = state.engine.clone();
    let result = tokio::task::spawn_blocking(move || {
        let r = engine.answer(&question);
        r.map(|env| to_response(env, &engine))
    })
    .await;
    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(Ok(resp)) => {
            state.stats.answered(resp.tier, elapsed_ms);
            tracing::info!(
                tier = %resp.tier,
                latency_ms = elapsed_ms,
                top_score = resp.sources.first().map(|s| s.score),
                sources = resp.sources.len(),
                "chat"
            );
            Json(resp).into_response()
        }
        Ok(Err(e)) => {
            state.stats.failed();
            tracing::warn!(error = %e, latency_ms = elapsed_ms, "chat failed");
            match e {
                RouterError::EmptyQuery => error(StatusCode::BAD_REQUEST, "empty_question", e.to_string()),
                RouterError::Embedding(ProviderError::DimensionMismatch { .. }) | RouterError::Index(_) => {
                    error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
                }
                _ => error(StatusCode::SERVICE_UNAVAILABLE, "providers_unavailable", e.to_string()),
            }
        }
        Err(e) => {
            state.stats.failed();
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
        }
    }
}

async fn stats(State(state): State<AppState>) -> Json<StatsResponse> {
    let s = &state.stats;
    let kb = state.engine.snapshot();
    let per_day = s
        .per_day
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .iter()
        .map(|(&date, &count)| DayCount { date, count })
        .collect();
    let per_tier = Tier::ALL
        .iter()
        .map(|&t| (t, s.tiers[tier_slot(t)].load(Ordering::Relaxed)))
        .collect();
    Json(StatsResponse {
        schema_version: SCHEMA_VERSION,
        uptime_secs: s.started.elapsed().as_secs_f64(),
        total_requests: s.total.load(Ordering::Relaxed),
        answered: s.answered.load(Ordering::Relaxed),
        errors: s.errors.load(Ordering::Relaxed),
        per_day,
        per_tier,
        latency_ms: s.latency(),
        documents: kb.titles().clone(),
        snapshot: SnapshotSummary::of(&kb),
    })
}

async fn health(State(state): State<AppState>) -> Response {
    let providers = state.engine.providers();
    let kb = state.engine.snapshot();
    let ready = providers.available();
    let body = HealthResponse {
        schema_version: SCHEMA_VERSION,
        status: if ready { "ok" } else { "providers_unavailable" }.to_owned(),
        indexes_loaded: true,
        embedder: providers.embedder_kind,
        generator: providers.generator_kind,
        snapshot: SnapshotSummary::of(&kb),
    };
    let status = if ready { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    (status, Json(body)).into_response()
}

async fn reload(State(state): State<AppState>) -> Response {
    let engine = state.engine.clone();
    match tokio::task::spawn_blocking(move || engine.reload()).await {
        Ok(Ok(snapshot)) => {
            tracing::info!(?snapshot, "snapshot reloaded");
            Json(ReloadResponse { schema_version: SCHEMA_VERSION, snapshot }).into_response()
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, "reload_failed", e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&v, 100.0), 100.0);
        assert_eq!(percentile(&[], 99.0), 0.0);
        assert_eq!(percentile(&[3.0], 1.0), 3.0);
    }

    #[test]
    fn latency_window_is_bounded() {
        let s = Stats::default();
        for i in 0..(LATENCY_WINDOW + 10) {
            s.answered(Tier::Faq, i as f64);
        }
        let l = s.latency();
        assert_eq!(l.count, LATENCY_WINDOW as u64);
        assert_eq!(l.max, (LATENCY_WINDOW + 9) as f64);
        assert_eq!(s.tiers[0].load(Ordering::Relaxed), (LATENCY_WINDOW + 10) as u64);
    }
}
