use std::net::SocketAddr;
use std::path::{Component, Path as FsPath, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use super::{discover_pairs, Condition, Study};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub originals: PathBuf,
    pub reconstructed: PathBuf,
    pub log_path: PathBuf,
    pub seed: u64,
    /// Directory holding a built study UI; a placeholder page is served without one.
    pub ui_dir: Option<PathBuf>,
}

impl StudyConfig {
    pub fn open_study(&self) -> Result<Study> {
        let pairs = discover_pairs(&self.originals, &self.reconstructed)?;
        if pairs.is_empty() {
            log::warn!("no asset pairs found; trials will be refused");
        }
        Study::open(pairs, self.seed, &self.log_path)
    }
}

struct Shared {
    study: Mutex<Study>,
    ui_dir: Option<PathBuf>,
}

type AppState = Arc<Shared>;

struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::ServiceNotReady(_) => StatusCode::SERVICE_UNAVAILABLE,
            Error::InvalidParameter(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{}", self.0);
        }
        (status, no_store(), Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

fn no_store() -> [(header::HeaderName, &'static str); 1] {
    [(header::CACHE_CONTROL, "no-store")]
}

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, Study> {
    state.study.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Deserialize)]
struct TrialQuery {
    session: String,
}

async fn trial(State(s): State<AppState>, Query(q): Query<TrialQuery>) -> std::result::Result<Response, ApiError> {
    let d = lock(&s).next_trial(&q.session)?;
    Ok((no_store(), Json(d)).into_response())
}

#[derive(Deserialize)]
struct VerdictBody {
    trial_id: String,
    verdict: Condition,
}

async fn verdict(State(s): State<AppState>, Json(b): Json<VerdictBody>) -> std::result::Result<Response, ApiError> {
    let study = s.clone();
    tokio::task::spawn_blocking(move || lock(&study).submit_verdict(&b.trial_id, b.verdict))
        .await
        .map_err(|e| Error::Http(e.to_string()))??;
    Ok((no_store(), Json(serde_json::json!({ "ok": true }))).into_response())
}

async fn results(State(s): State<AppState>) -> Response {
    let agg = lock(&s).aggregate();
    (no_store(), Json(agg.to_json())).into_response()
}

async fn media(State(s): State<AppState>, Path((id, frame)): Path<(String, usize)>) -> std::result::Result<Response, ApiError> {
    let bytes = tokio::task::spawn_blocking(move || lock(&s).media(&id, frame))
        .await
        .map_err(|e| Error::Http(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")], bytes.as_ref().clone()).into_response())
}

const PLACEHOLDER: &str = "<!doctype html><title>cdc study</title><p>No study UI is installed. The API is under /api.</p>";

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

/// Static files of the UI bundle; `/` maps to `index.html`.
async fn ui(State(s): State<AppState>, uri: Uri) -> Response {
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = FsPath::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    match &s.ui_dir {
        Some(dir) => match std::fs::read(dir.join(rel)) {
            Ok(bytes) => ([(header::CONTENT_TYPE, content_type(rel))], bytes).into_response(),
            Err(_) => StatusCode::NOT_FOUND.into_response(),
        },
        None if rel == FsPath::new("index.html") => Html(PLACEHOLDER).into_response(),
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

pub fn router(study: Study, ui_dir: Option<PathBuf>) -> Router {
    let state = Arc::new(Shared { study: Mutex::new(study), ui_dir });
    Router::new()
        .route("/api/trial", get(trial))
        .route("/api/verdict", post(verdict))
        .route("/api/results", get(results))
        .route("/assets/trial/{id}/{frame}", get(media))
        .fallback(get(ui))
        .with_state(state)
}

/// A study server running on a background thread until [`RunningStudy::shutdown`] or drop.
pub struct RunningStudy {
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningStudy {
    pub fn start(cfg: &StudyConfig, addr: SocketAddr) -> Result<Self> {
        let app = router(cfg.open_study()?, cfg.ui_dir.clone());
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let stopped = async {
                    let _ = rx.await;
                };
                if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(stopped).await {
                    log::error!("study server stopped: {e}");
                }
            })
        });
        Ok(Self { addr, stop: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for RunningStudy {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Serves until interrupted; `on_bound` receives the bound address first.
pub fn serve_blocking(cfg: &StudyConfig, addr: SocketAddr, on_bound: impl FnOnce(SocketAddr)) -> Result<()> {
    let app = router(cfg.open_study()?, cfg.ui_dir.clone());
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_bound(listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
