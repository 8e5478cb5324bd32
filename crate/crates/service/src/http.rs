//! Annotation API over HTTP.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::Deserialize;
use serde_json::json;
use streetsafe_core::ImageKey;
use tower_http::services::ServeDir;

use crate::annotate::{Annotator, VoteError, QUESTION};

type Shared = Arc<Annotator>;

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<VoteError> for ApiError {
    fn from(e: VoteError) -> Self {
        let status = match e {
            VoteError::UnknownJudge | VoteError::UnknownPair => StatusCode::NOT_FOUND,
            VoteError::InvalidChoice(_) => StatusCode::BAD_REQUEST,
            VoteError::Conflict(_) => StatusCode::CONFLICT,
            VoteError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

#[derive(Deserialize)]
struct JudgeQuery {
    judge: String,
}

#[derive(Deserialize)]
struct VoteBody {
    judge_id: String,
    pair_id: String,
    choice: String,
}

/// URL path under which the service proxies an image.
pub fn image_path(key: &ImageKey) -> String {
    format!("/api/image/{}", utf8_percent_encode(&key.to_string(), NON_ALPHANUMERIC))
}

async fn session(State(a): State<Shared>) -> Result<Json<serde_json::Value>, ApiError> {
    let id = a.start_session().map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    log::info!("new session {id}");
    Ok(Json(json!({ "judge_id": id })))
}

async fn pair(State(a): State<Shared>, Query(q): Query<JudgeQuery>) -> Result<Response, ApiError> {
    Ok(match a.next_pair(&q.judge)? {
        None => StatusCode::NO_CONTENT.into_response(),
        Some(p) => Json(json!({
            "pair_id": p.pair_id,
            "question": QUESTION,
            "left": { "key": p.left, "image": image_path(&p.left) },
            "right": { "key": p.right, "image": image_path(&p.right) },
            "progress": p.progress,
        }))
        .into_response(),
    })
}

async fn vote(State(a): State<Shared>, Json(v): Json<VoteBody>) -> Result<Json<serde_json::Value>, ApiError> {
    let progress = a.vote(&v.judge_id, &v.pair_id, &v.choice)?;
    Ok(Json(json!({ "ok": true, "progress": progress })))
}

async fn progress(State(a): State<Shared>, Query(q): Query<JudgeQuery>) -> Result<Json<serde_json::Value>, ApiError> {
    Ok(Json(serde_json::to_value(a.progress(&q.judge)?).expect("progress serializes")))
}

async fn guidelines(State(a): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({ "safe": a.criteria().safe, "dangerous": a.criteria().dangerous }))
}

fn content_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        "image/png"
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        "image/jpeg"
    } else if bytes.starts_with(b"RIFF") && bytes.get(8..12) == Some(b"WEBP") {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}

async fn image(State(a): State<Shared>, Path(key): Path<String>) -> Result<Response, ApiError> {
    let key: ImageKey = key.parse().map_err(|_| ApiError(StatusCode::NOT_FOUND, format!("bad image key {key:?}")))?;
    let r = a
        .image_ref(&key)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no image for {key}")))?;
    if r.starts_with("http://") || r.starts_with("https://") {
        return Ok(Redirect::temporary(r).into_response());
    }
    let path = r.strip_prefix("file://").unwrap_or(r);
    let bytes = tokio::fs::read(path)
        .await
        .map_err(|e| ApiError(StatusCode::NOT_FOUND, format!("{key}: {e}")))?;
    Ok(([(header::CONTENT_TYPE, content_type(&bytes))], bytes).into_response())
}

pub fn router(annotator: Arc<Annotator>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/session", get(session))
        .route("/api/pair", get(pair))
        .route("/api/vote", post(vote))
        .route("/api/progress", get(progress))
        .route("/api/guidelines", get(guidelines))
        .route("/api/image/{key}", get(image))
        .with_state(annotator);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// A server on its own runtime thread. Dropping the handle stops it.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

/// Binds `addr` (port 0 picks a free one) and serves `app` in the background.
pub fn spawn(app: Router, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let local = std_listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::Builder::new().name(format!("http-{local}")).spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("tokio runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    })?;
    Ok(ServerHandle { addr: local, shutdown: Some(tx), thread: Some(thread) })
}

/// Serves `app` on an already bound listener until the process is stopped.
pub fn serve_forever(app: Router, listener: std::net::TcpListener) -> std::io::Result<()> {
    listener.set_nonblocking(true)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await
    })
}
