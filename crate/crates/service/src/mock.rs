//! Stand-in endpoints for offline runs and tests: a chat-completions mock
//! that answers from a script and records what it was sent, and an
//! embedding mock that answers from a table or a per-reference hash.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use streetsafe_core::rng;

pub const CHAT_PATH: &str = "/v1/chat/completions";
pub const EMBED_PATH: &str = "/v1/embeddings";

/// A well-formed judge reply picking the first image.
pub const DEFAULT_REPLY: &str = "Choice: A: First Image. The first image depicts a well-maintained urban space with clear pedestrian pathways, neat rows of trees, and a vibrant garden area, which typically indicates a well-cared-for and safer environment.";

#[derive(Debug, Clone)]
pub struct MockChatConfig {
    /// Replies handed out in turn, cycling.
    pub replies: Vec<String>,
    /// Status codes returned (with `Retry-After: 0`) before any reply.
    pub failures: Vec<u16>,
    /// Keep full request bodies.
    pub record: bool,
}

impl Default for MockChatConfig {
    fn default() -> Self {
        MockChatConfig { replies: vec![DEFAULT_REPLY.to_string()], failures: Vec::new(), record: true }
    }
}

#[derive(Default)]
struct ChatState {
    replies: Vec<String>,
    failures: Mutex<VecDeque<u16>>,
    record: bool,
    served: AtomicU64,
    replied: AtomicU64,
    requests: Mutex<Vec<Value>>,
    headers: Mutex<Vec<HeaderMap>>,
}

/// Handle for inspecting what the chat mock received.
#[derive(Clone)]
pub struct MockChat(Arc<ChatState>);

impl MockChat {
    pub fn new(cfg: MockChatConfig) -> Self {
        assert!(!cfg.replies.is_empty(), "mock needs at least one reply");
        MockChat(Arc::new(ChatState {
            replies: cfg.replies,
            failures: Mutex::new(cfg.failures.into()),
            record: cfg.record,
            ..ChatState::default()
        }))
    }

    pub fn router(&self) -> Router {
        Router::new().route(CHAT_PATH, post(chat)).with_state(self.0.clone())
    }

    /// Requests answered, including scripted failures.
    pub fn request_count(&self) -> u64 {
        self.0.served.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<Value> {
        self.0.requests.lock().unwrap().clone()
    }

    pub fn authorization_headers(&self) -> Vec<Option<String>> {
        self.0
            .headers
            .lock()
            .unwrap()
            .iter()
            .map(|h| h.get("authorization").and_then(|v| v.to_str().ok()).map(str::to_string))
            .collect()
    }
}

async fn chat(State(s): State<Arc<ChatState>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let n = s.served.fetch_add(1, Ordering::SeqCst);
    if s.record {
        s.requests.lock().unwrap().push(body);
        s.headers.lock().unwrap().push(headers);
    }
    let rid = HeaderValue::from_str(&format!("mock-{n}")).expect("ascii");
    if let Some(code) = s.failures.lock().unwrap().pop_front() {
        let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        return (status, [("retry-after", HeaderValue::from_static("0")), ("x-request-id", rid)], "scripted failure")
            .into_response();
    }
    let idx = s.replied.fetch_add(1, Ordering::SeqCst) as usize % s.replies.len();
    let reply = &s.replies[idx];
    (
        [("x-request-id", rid)],
        Json(json!({
            "id": format!("chatcmpl-mock-{n}"),
            "object": "chat.completion",
            "choices": [{ "index": 0, "message": { "role": "assistant", "content": reply }, "finish_reason": "stop" }],
        })),
    )
        .into_response()
}

#[derive(Deserialize)]
struct EmbedRequest {
    images: Vec<String>,
}

struct EmbedState {
    dim: usize,
    table: BTreeMap<String, Vec<f32>>,
    served: AtomicU64,
}

/// Embedding endpoint: vectors come from `table` by image reference, else
/// from a generator seeded by the reference itself.
#[derive(Clone)]
pub struct MockEmbed(Arc<EmbedState>);

impl MockEmbed {
    pub fn new(dim: usize, table: BTreeMap<String, Vec<f32>>) -> Self {
        MockEmbed(Arc::new(EmbedState { dim, table, served: AtomicU64::new(0) }))
    }

    pub fn router(&self) -> Router {
        Router::new().route(EMBED_PATH, post(embed)).with_state(self.0.clone())
    }

    pub fn request_count(&self) -> u64 {
        self.0.served.load(Ordering::SeqCst)
    }
}

/// Deterministic pseudo-random vector for an unknown reference.
pub fn hashed_vector(image_ref: &str, dim: usize) -> Vec<f32> {
    use rand::Rng as _;
    let mut r = rng::seeded(rng::derive_seed(0, &["mock-embed", image_ref]));
    (0..dim).map(|_| r.random_range(-1.0f32..1.0)).collect()
}

async fn embed(State(s): State<Arc<EmbedState>>, Json(req): Json<EmbedRequest>) -> Json<Value> {
    s.served.fetch_add(1, Ordering::SeqCst);
    let vectors: Vec<Vec<f32>> = req
        .images
        .iter()
        .map(|r| s.table.get(r).cloned().unwrap_or_else(|| hashed_vector(r, s.dim)))
        .collect();
    Json(json!({ "vectors": vectors }))
}
