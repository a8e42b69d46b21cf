use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::{DecisionPayload, QueueFilter, ReviewError, ReviewState};

/// Loopback only; binding elsewhere needs [`ServeOptions::allow_lan`].
pub const DEFAULT_BIND: &str = "127.0.0.1:8737";

const INDEX_HTML: &str = include_str!("../assets/index.html");

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub bind: SocketAddr,
    /// Permit a non-loopback bind address.
    pub allow_lan: bool,
    /// Directory of UI assets served at `/` instead of the built-in page.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            bind: DEFAULT_BIND.parse().expect("valid default bind"),
            allow_lan: false,
            ui_dir: None,
        }
    }
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let status = match self.code() {
            "UnknownItem" => StatusCode::NOT_FOUND,
            "MissingCrop" => StatusCode::NOT_FOUND,
            "NoteRequired" | "ScoreOutOfRange" | "AcceptMismatch" | "MissingScore" => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({ "error": self.code(), "message": self.to_string() });
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    #[serde(default)]
    filter: QueueFilter,
}

async fn queue(State(state): State<Arc<ReviewState>>, Query(q): Query<QueueQuery>) -> Response {
    Json(state.queue(q.filter)).into_response()
}

async fn item(
    State(state): State<Arc<ReviewState>>,
    Path(id): Path<String>,
) -> Result<Response, ReviewError> {
    let item = state
        .item(&id)
        .ok_or(ReviewError::UnknownItem(id.clone()))?;
    let history = state.history(&id);
    Ok(Json(json!({ "item": item, "history": history })).into_response())
}

async fn decision(
    State(state): State<Arc<ReviewState>>,
    Path(id): Path<String>,
    Json(payload): Json<DecisionPayload>,
) -> Result<Response, ReviewError> {
    let state = state.clone();
    let item = tokio::task::spawn_blocking(move || state.apply_decision(&id, payload))
        .await
        .expect("decision task")?;
    Ok(Json(item).into_response())
}

async fn export_csv(State(state): State<Arc<ReviewState>>) -> Result<Response, ReviewError> {
    let csv = state.export_decisions()?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn crop(
    State(state): State<Arc<ReviewState>>,
    Path(file): Path<String>,
) -> Result<Response, ReviewError> {
    let path = state
        .job()
        .crop_file(&file)
        .filter(|_| state.serves_crop(&file))
        .ok_or_else(|| ReviewError::MissingCrop(file.clone()))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ReviewError::MissingCrop(file))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

/// JSON API, crop images and the UI.
///
/// | method | path |
/// |---|---|
/// | GET | `/api/queue?filter=all\|flagged_only\|undecided_only` |
/// | GET | `/api/items/{id}` |
/// | POST | `/api/items/{id}/decision` |
/// | GET | `/api/export.csv` |
/// | GET | `/crops/{file}` |
/// | GET | `/` |
pub fn router(state: Arc<ReviewState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/items/{id}", get(item))
        .route("/api/items/{id}/decision", post(decision))
        .route("/api/export.csv", get(export_csv))
        .route("/crops/{file}", get(crop))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}

/// Serve `state` until Ctrl-C.
pub async fn serve(state: Arc<ReviewState>, options: ServeOptions) -> Result<(), ReviewError> {
    if !options.bind.ip().is_loopback() && !options.allow_lan {
        return Err(ReviewError::Bind(format!(
            "{} is not a loopback address; pass the LAN opt-in to expose the service",
            options.bind
        )));
    }
    let listener = tokio::net::TcpListener::bind(options.bind)
        .await
        .map_err(|e| ReviewError::Bind(format!("{}: {e}", options.bind)))?;
    log::info!("review service listening on http://{}", options.bind);
    axum::serve(listener, router(state, options.ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ReviewError::Bind(e.to_string()))
}
