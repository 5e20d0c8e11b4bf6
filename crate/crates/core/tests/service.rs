//! HTTP contract of the chat service over a real socket.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use reqwest::StatusCode;
use serde_json::{json, Value};

use urag::batcher::BatchedSearch;
use urag::config::AppConfig;
use urag::engine::{Engine, Providers};
use urag::model::Tier;
use urag::pipeline;
use urag::router::KnowledgeBase;
use urag::service::{self, AppState, ChatResponse, ErrorResponse, HealthResponse, StatsResponse};
use urag::store::Store;

fn fixtures() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures"))
}

fn mock_config() -> AppConfig {
    let mut c = AppConfig::default();
    c.providers.mock = true;
    c
}

/// A store built once from the fixture corpus.
fn store() -> &'static Store {
    static STORE: OnceLock<(tempfile::TempDir, Store)> = OnceLock::new();
    &STORE
        .get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            let store = Store::new(dir.path());
            let config = mock_config();
            let providers = Providers::mock(&config);
            pipeline::ingest(&store, &fixtures().join("corpus"), Some(&fixtures().join("seed_faq.jsonl"))).unwrap();
            pipeline::augment(&store, &config, &providers).unwrap();
            pipeline::enrich(&store, &config, &providers).unwrap();
            (dir, store)
        })
        .1
}

struct Server {
    rt: tokio::runtime::Runtime,
    base: String,
    client: reqwest::Client,
}

impl Server {
    fn start(engine: Engine) -> Self {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let state = AppState::new(Arc::new(engine));
        let base = rt.block_on(async {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            let addr = listener.local_addr().unwrap();
            tokio::spawn(async move { axum::serve(listener, service::app(state)).await });
            format!("http://{addr}")
        });
        Self { rt, base, client: reqwest::Client::new() }
    }

    fn mock() -> Self {
        let config = mock_config();
        let providers = Providers::mock(&config);
        let engine = Engine::open(config, store().clone(), providers).unwrap().with_search(Arc::new(BatchedSearch::new(16)));
        Self::start(engine)
    }

    fn post(&self, path: &str, body: &str) -> (StatusCode, Value) {
        self.rt.block_on(async {
            let resp = self
                .client
                .post(format!("{}{path}", self.base))
                .header("content-type", "application/json")
                .body(body.to_owned())
                .send()
                .await
                .unwrap();
            (resp.status(), resp.json().await.unwrap())
        })
    }

    fn get(&self, path: &str) -> (StatusCode, Value) {
        self.rt.block_on(async {
            let resp = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
            (resp.status(), resp.json().await.unwrap())
        })
    }

    fn ask(&self, question: &str) -> ChatResponse {
        let (status, body) = self.post("/v1/chat", &json!({ "question": question }).to_string());
        assert_eq!(status, StatusCode::OK, "{body}");
        serde_json::from_value(body).unwrap()
    }
}

#[test]
fn seed_question_is_answered_verbatim_from_the_faq() {
    let s = Server::mock();
    let r = s.ask("What are the library opening hours?");
    assert_eq!(r.schema_version, 1);
    assert_eq!(r.tier, Tier::Faq);
    assert_eq!(r.answer, "The central library is open 7:00 to 21:00 on weekdays and 8:00 to 17:00 on Saturdays.");
    assert!(r.disclaimer.is_none());
    assert!(!r.sources.is_empty() && r.sources[0].score >= 0.9);
}

#[test]
fn unrelated_question_falls_back_with_disclaimer() {
    let s = Server::mock();
    let r = s.ask("Who won the football match yesterday?");
    assert_eq!(r.tier, Tier::Fallback);
    let d = r.disclaimer.expect("fallback carries a disclaimer");
    assert!(r.answer.ends_with(&d));
    assert!(r.sources.is_empty());
}

#[test]
fn bad_requests_get_structured_errors() {
    let s = Server::mock();
    for (body, code) in [
        (r#"{"question": "   "}"#, "empty_question"),
        (r#"{}"#, "empty_question"),
        ("not json", "bad_request"),
        (r#"{"question": 5}"#, "bad_request"),
    ] {
        let (status, v) = s.post("/v1/chat", body);
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        let e: ErrorResponse = serde_json::from_value(v).unwrap();
        assert_eq!(e.schema_version, 1);
        assert_eq!(e.error.code, code, "{body}");
    }
}

#[test]
fn stats_count_requests_tiers_and_errors() {
    let s = Server::mock();
    s.ask("What are the library opening hours?");
    s.ask("How much does a dormitory room cost?");
    s.ask("Who won the football match yesterday?");
    s.post("/v1/chat", "{}");
    let (status, v) = s.get("/v1/stats");
    assert_eq!(status, StatusCode::OK);
    let st: StatsResponse = serde_json::from_value(v).unwrap();
    assert_eq!(st.schema_version, 1);
    assert_eq!(st.total_requests, 4);
    assert_eq!(st.answered, 3);
    assert_eq!(st.errors, 1);
    assert_eq!(st.per_tier[&Tier::Faq], 2);
    assert_eq!(st.per_tier[&Tier::Fallback], 1);
    assert_eq!(st.per_tier.values().sum::<u64>(), st.answered);
    assert_eq!(st.per_day.iter().map(|d| d.count).sum::<u64>(), 4);
    assert_eq!(st.latency_ms.count, 3);
    assert!(st.latency_ms.p50 <= st.latency_ms.p99 && st.latency_ms.p99 <= st.latency_ms.max);
    assert_eq!(st.documents.len(), 10);
    assert!(st.documents.values().any(|t| t == "Central Library"));
    assert!(st.snapshot.faq_entries > 6 && st.snapshot.chunks > 0);
}

#[test]
fn health_and_reload() {
    let s = Server::mock();
    let (status, v) = s.get("/v1/health");
    assert_eq!(status, StatusCode::OK);
    let h: HealthResponse = serde_json::from_value(v).unwrap();
    assert_eq!(h.status, "ok");
    assert!(h.indexes_loaded);

    let (status, v) = s.post("/v1/admin/reload", "");
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["snapshot"]["documents"], 10);
}

#[test]
fn identical_concurrent_requests_get_identical_answers() {
    let s = Server::mock();
    let questions = ["How do I pay my tuition fees?", "Can I renew a library loan twice?"];
    for q in questions {
        let answers: Vec<ChatResponse> = s.rt.block_on(async {
            let tasks: Vec<_> = (0..50)
                .map(|_| {
                    let (client, url) = (s.client.clone(), format!("{}/v1/chat", s.base));
                    tokio::spawn(async move {
                        let resp = client.post(url).json(&json!({ "question": q })).send().await.unwrap();
                        assert_eq!(resp.status(), StatusCode::OK);
                        resp.json::<ChatResponse>().await.unwrap()
                    })
                })
                .collect();
            let mut out = Vec::new();
            for t in tasks {
                out.push(t.await.unwrap());
            }
            out
        });
        let strip = |r: &ChatResponse| (r.answer.clone(), r.tier, r.sources.clone(), r.disclaimer.clone());
        let first = strip(&answers[0]);
        assert!(answers.iter().all(|a| strip(a) == first), "answers differ for {q:?}");
    }
}

#[test]
fn unconfigured_providers_answer_503() {
    let mut config = AppConfig::default();
    config.embedder.dimension = 32;
    std::env::remove_var("URAG_EMBED_BASE_URL");
    std::env::remove_var("URAG_GEN_BASE_URL");
    let providers = Providers::from_config(&config, false);
    let engine = Engine::with_knowledge_base(config, providers, KnowledgeBase::empty(32));
    let s = Server::start(engine);

    let (status, v) = s.get("/v1/health");
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["status"], "providers_unavailable");
    assert_eq!(v["embedder"], "unconfigured");

    let (status, v) = s.post("/v1/chat", r#"{"question": "hello"}"#);
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"]["code"], "providers_unavailable");
    assert_eq!(v["schema_version"], 1);
}
