//! JSON-over-HTTP front end to a [`SessionStore`].
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/sessions` | list sessions |
//! | POST | `/sessions` | create a session |
//! | GET | `/sessions/{id}/next?rater=R` | next prompt for a rater |
//! | POST | `/sessions/{id}/scores` | record one score |
//! | POST | `/sessions/{id}/close` | close a session |
//! | GET | `/sessions/{id}/aggregate` | pooled per-scale statistics |
//! | GET | `/images/{image}?session=S` | image bytes |
//!
//! Validation failures answer 400, unknown ids 404 and writes to a closed
//! session 409. Error bodies are `{"error": "..."}`.

use std::net::SocketAddr;
use std::path::{Component, Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::store::Progress;
use super::{LikertError, LikertScore, SessionImage, SessionStore, StdKind, DEFAULT_SAMPLE_SIZE, DEFAULT_SCALES};
use crate::modelio::list_generated;
use crate::mutate::DEFAULT_SEED;

pub struct AppState {
    pub store: SessionStore,
    /// Optional directory of static files served for unmatched GETs.
    pub static_dir: Option<PathBuf>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/scores", post(record))
        .route("/sessions/{id}/close", post(close))
        .route("/sessions/{id}/aggregate", get(aggregate))
        .route("/images/{image}", get(image))
        .fallback(static_file)
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "likert service listening");
    axum::serve(listener, router(state)).await
}

pub struct ApiError(LikertError);

impl From<LikertError> for ApiError {
    fn from(e: LikertError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            LikertError::UnknownSession(_) | LikertError::UnknownImage(_) => StatusCode::NOT_FOUND,
            LikertError::SessionClosed(_) => StatusCode::CONFLICT,
            LikertError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| LikertError::BadRequest(e.to_string()).into())
}

#[derive(Serialize)]
struct SessionSummary {
    id: String,
    test_case: String,
    status: super::SessionStatus,
    n_images: usize,
    scales: Vec<String>,
    raters: usize,
}

async fn list_sessions(State(st): State<Arc<AppState>>) -> Json<Vec<SessionSummary>> {
    Json(
        st.store
            .list()
            .into_iter()
            .map(|s| SessionSummary {
                n_images: s.images.len(),
                raters: s.raters.len(),
                id: s.id,
                test_case: s.test_case,
                status: s.status,
                scales: s.scales,
            })
            .collect(),
    )
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub test_case: String,
    /// Directory of generated images; file stems become image ids.
    #[serde(default)]
    pub images_dir: Option<PathBuf>,
    #[serde(default)]
    pub images: Vec<SessionImage>,
    #[serde(default)]
    pub scales: Option<Vec<String>>,
    #[serde(default)]
    pub sample_size: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

async fn create_session(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateRequest = parse_body(&body)?;
    let mut images = req.images;
    if let Some(dir) = &req.images_dir {
        let listed = list_generated(dir).map_err(|e| LikertError::BadRequest(e.to_string()))?;
        images.extend(listed.into_iter().map(|(id, path)| SessionImage { id, path }));
    }
    let scales = req
        .scales
        .unwrap_or_else(|| DEFAULT_SCALES.iter().map(|s| s.to_string()).collect());
    let sample = req.sample_size.unwrap_or(DEFAULT_SAMPLE_SIZE.min(images.len()));
    let session = st
        .store
        .create(&req.test_case, &images, &scales, sample, req.seed.unwrap_or(DEFAULT_SEED))?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

#[derive(Deserialize)]
struct RaterQuery {
    rater: Option<String>,
}

#[derive(Serialize)]
struct NextResponse {
    done: bool,
    image: Option<String>,
    image_url: Option<String>,
    scale: Option<String>,
    progress: Progress,
}

async fn next(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<RaterQuery>,
) -> ApiResult<Json<NextResponse>> {
    let rater = q
        .rater
        .filter(|r| !r.trim().is_empty())
        .ok_or_else(|| LikertError::BadRequest("missing rater".into()))?;
    let (prompt, progress) = st.store.next(&id, &rater)?;
    Ok(Json(match prompt {
        Some((img, scale)) => NextResponse {
            done: false,
            image_url: Some(format!("/images/{}?session={}", img.id, id)),
            image: Some(img.id),
            scale: Some(scale),
            progress,
        },
        None => NextResponse { done: true, image: None, image_url: None, scale: None, progress },
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRequest {
    rater: String,
    image: String,
    scale: String,
    value: i64,
}

async fn record(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Progress>> {
    let req: ScoreRequest = parse_body(&body)?;
    let progress = st.store.record(LikertScore {
        session_id: id,
        rater: req.rater,
        image: req.image,
        scale: req.scale,
        value: req.value,
        timestamp: Utc::now(),
    })?;
    Ok(Json(progress))
}

async fn close(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(st.store.close(&id)?).into_response())
}

#[derive(Deserialize)]
struct AggregateQuery {
    #[serde(default)]
    std: StdKind,
}

async fn aggregate(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<AggregateQuery>,
) -> ApiResult<Response> {
    Ok(Json(st.store.aggregate(&id, q.std)?).into_response())
}

#[derive(Deserialize)]
struct ImageQuery {
    session: Option<String>,
}

async fn image(
    State(st): State<Arc<AppState>>,
    Path(image): Path<String>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<Response> {
    let path = st.store.image_path(&image, q.session.as_deref())?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| LikertError::UnknownImage(image.clone()))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn static_file(State(st): State<Arc<AppState>>, uri: Uri) -> Response {
    let not_found = || (StatusCode::NOT_FOUND, Json(json!({ "error": "not found" }))).into_response();
    let Some(root) = &st.static_dir else {
        return not_found();
    };
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = FsPath::new(rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return not_found();
    }
    let path = root.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => not_found(),
    }
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}
