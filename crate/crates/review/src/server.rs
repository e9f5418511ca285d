use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use crate::annotation::{AnnotationLog, AnnotationRecord, AnnotationRequest, LogError, Verdict};
use crate::consolidate::{consolidate, export_retraining};
use crate::queue::{QueueItem, ReviewItem, Stats};

pub const ANNOTATOR_HEADER: &str = "x-annotator";
const DEFAULT_LIMIT: usize = 50;

#[derive(Clone)]
pub struct AppState {
    items: Arc<BTreeMap<String, QueueItem>>,
    log: Arc<AnnotationLog>,
    images_dir: Option<Arc<PathBuf>>,
}

impl AppState {
    pub fn new(items: Vec<QueueItem>, log: AnnotationLog, images_dir: Option<PathBuf>) -> Self {
        Self {
            items: Arc::new(items.into_iter().map(|i| (i.image_id.clone(), i)).collect()),
            log: Arc::new(log),
            images_dir: images_dir.map(Arc::new),
        }
    }

    pub fn log(&self) -> &AnnotationLog {
        &self.log
    }

    /// Every item with its derived status, sorted by score descending then id.
    pub fn review_items(&self) -> Vec<ReviewItem> {
        let records = self.log.records();
        let mut by_image: HashMap<&str, Vec<&AnnotationRecord>> = HashMap::new();
        for r in &records {
            by_image.entry(r.image_id.as_str()).or_default().push(r);
        }
        let mut out: Vec<ReviewItem> = self
            .items
            .values()
            .map(|it| {
                let recs = by_image.get(it.image_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                ReviewItem::from_records(it.clone(), recs)
            })
            .collect();
        out.sort_by(|a, b| {
            b.item
                .score
                .total_cmp(&a.item.score)
                .then_with(|| a.item.image_id.cmp(&b.item.image_id))
        });
        out
    }

    pub fn stats(&self) -> Stats {
        Stats::compute(&self.review_items(), &self.log.records())
    }
}

struct ApiError(StatusCode, serde_json::Value);

impl ApiError {
    fn new(code: StatusCode, msg: impl Into<String>) -> Self {
        Self(code, json!({ "error": msg.into() }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    status: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

#[derive(Debug, Serialize)]
struct QueuePage {
    total: usize,
    items: Vec<ReviewItem>,
}

async fn queue(State(st): State<AppState>, Query(q): Query<QueueParams>) -> Result<Json<QueuePage>, ApiError> {
    if let Some(s) = &q.status {
        if !["pending", "confirmed", "rejected", "flagged"].contains(&s.as_str()) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown status {s:?}")));
        }
    }
    let all: Vec<ReviewItem> = st
        .review_items()
        .into_iter()
        .filter(|it| q.status.as_deref().is_none_or(|s| it.matches_filter(s)))
        .collect();
    let total = all.len();
    let items = all
        .into_iter()
        .skip(q.offset.unwrap_or(0))
        .take(q.limit.unwrap_or(DEFAULT_LIMIT))
        .collect();
    Ok(Json(QueuePage { total, items }))
}

#[derive(Debug, Serialize)]
struct ItemDetail {
    item: ReviewItem,
    annotations: Vec<AnnotationRecord>,
}

async fn item(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<ItemDetail>, ApiError> {
    let base = st
        .items
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no item {id}")))?;
    let annotations = st.log.records_for(&id);
    let refs: Vec<&AnnotationRecord> = annotations.iter().collect();
    Ok(Json(ItemDetail {
        item: ReviewItem::from_records(base.clone(), &refs),
        annotations,
    }))
}

async fn annotate(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(req): Json<AnnotationRequest>,
) -> Result<(StatusCode, Json<AnnotationRecord>), ApiError> {
    if !st.items.contains_key(&id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no item {id}")));
    }
    if req.image_id.as_ref().is_some_and(|b| b != &id) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "body image_id does not match the URL"));
    }
    let annotator = req
        .annotator
        .or_else(|| {
            headers
                .get(ANNOTATOR_HEADER)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        })
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "annotator missing"))?;
    let rec = AnnotationRecord {
        image_id: id,
        annotator,
        revision: req.revision,
        verdict: req.verdict,
        truth_spans: req.truth_spans,
        timestamp: 0,
    };
    let log = st.log.clone();
    let result = tokio::task::spawn_blocking(move || log.append(rec))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match result {
        Ok(saved) => Ok((StatusCode::CREATED, Json(saved))),
        Err(e @ LogError::StaleRevision { latest, .. }) => Err(ApiError(
            StatusCode::CONFLICT,
            json!({ "error": e.to_string(), "latest_revision": latest }),
        )),
        Err(e @ LogError::Invalid(_)) => Err(ApiError::new(StatusCode::BAD_REQUEST, e.to_string())),
        Err(e) => {
            log::error!("annotation append failed: {e}");
            Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
        }
    }
}

#[derive(Debug, Deserialize)]
struct ExportParams {
    verdict: Option<Verdict>,
}

async fn export_retrain(State(st): State<AppState>, Query(q): Query<ExportParams>) -> impl IntoResponse {
    Json(export_retraining(&st.log.records(), q.verdict))
}

async fn export_truth(State(st): State<AppState>) -> impl IntoResponse {
    Json(consolidate(&st.log.records()))
}

async fn stats(State(st): State<AppState>) -> impl IntoResponse {
    Json(st.stats())
}

const IMAGE_TYPES: [(&str, &str); 3] = [("png", "image/png"), ("jpg", "image/jpeg"), ("jpeg", "image/jpeg")];

async fn image(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("no image {id}"));
    let dir = st.images_dir.as_ref().ok_or_else(not_found)?;
    let safe = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if !safe || !st.items.contains_key(&id) {
        return Err(not_found());
    }
    for (ext, mime) in IMAGE_TYPES {
        let path = dir.join(format!("{id}.{ext}"));
        if let Ok(bytes) = tokio::fs::read(&path).await {
            return Ok(([(header::CONTENT_TYPE, mime)], Body::from(bytes)).into_response());
        }
    }
    Err(not_found())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/queue", get(queue))
        .route("/api/items/{id}", get(item))
        .route("/api/items/{id}/annotation", post(annotate))
        .route("/api/export/retraining", get(export_retrain))
        .route("/api/export/ground_truth", get(export_truth))
        .route("/api/stats", get(stats))
        .route("/api/images/{id}", get(image))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve<F>(listener: TcpListener, state: AppState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
