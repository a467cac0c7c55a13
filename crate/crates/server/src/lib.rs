//! HTTP/JSON session service over the analysis engine.
//!
//! Each session owns an immutable base table plus a mutable view (row
//! filter and feature subset). Fitted models record the view revision they
//! were computed on; routes that need a model reject stale ones with 409.

pub mod error;
pub mod ops;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::RwLock;
use tower_http::cors::{AllowOrigin, CorsLayer};

use projscope_core::data::{export_csv, load_csv, DataTable, LoadOptions};
use projscope_core::stats::{anova_by_clusters, corr_pairs, point_stats};
use projscope_core::{CancelToken, Error};

use crate::error::{ApiError, ApiJson};
use crate::ops::{
    projection_result, run_backward, run_clustering, run_forward, run_projection, run_prolines,
    AnovaRequest, BackwardRequest, ClusterRequest, ForwardRequest, ProjectionRequest, ProlineRequest,
};
use crate::session::{Fitted, Session, SessionHandle, Snapshot, TableQuery};

pub const DEFAULT_PORT: u16 = 8080;
pub const PORT_ENV: &str = "PROJSCOPE_PORT";
const MAX_UPLOAD: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Root for server-side CSV paths and snapshots. Path loading and
    /// snapshots are disabled without it.
    pub data_dir: Option<PathBuf>,
    /// Allowed CORS origin; any origin when unset.
    pub ui_origin: Option<String>,
}

#[derive(Debug, Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
    config: ServerConfig,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        Self {
            sessions: RwLock::default(),
            config,
        }
    }

    async fn handle(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session `{id}`")))
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    let cors = match &state.config.ui_origin {
        Some(origin) => match HeaderValue::from_str(origin) {
            Ok(v) => CorsLayer::permissive().allow_origin(AllowOrigin::exact(v)),
            Err(_) => CorsLayer::permissive(),
        },
        None => CorsLayer::permissive(),
    };
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/table", get(table_page))
        .route("/sessions/{id}/filter", put(set_filter))
        .route("/sessions/{id}/features", put(set_features))
        .route("/sessions/{id}/clustering", post(fit_clustering))
        .route("/sessions/{id}/projection", post(fit_projection))
        .route("/sessions/{id}/forward", post(forward))
        .route("/sessions/{id}/prolines", post(prolines))
        .route("/sessions/{id}/backward", post(backward))
        .route("/sessions/{id}/stats/anova", post(anova))
        .route("/sessions/{id}/stats/correlations", get(correlations))
        .route("/sessions/{id}/stats/points", get(points))
        .route("/sessions/{id}/export.csv", get(export))
        .route("/sessions/{id}/snapshot", post(snapshot))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .layer(cors)
        .with_state(state)
}

/// Port from `PROJSCOPE_PORT`, else [`DEFAULT_PORT`].
pub fn port_from_env() -> u16 {
    std::env::var(PORT_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_PORT)
}

pub async fn serve(addr: SocketAddr, config: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(AppState::new(config)))).await
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, Error> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Default, Deserialize)]
struct LoadQuery {
    delimiter: Option<String>,
    header: Option<bool>,
    id_column: Option<String>,
}

#[derive(Debug, Deserialize)]
struct PathSource {
    path: String,
    #[serde(flatten)]
    options: LoadQuery,
}

fn load_options(q: &LoadQuery) -> Result<LoadOptions, ApiError> {
    let mut opts = LoadOptions::default();
    if let Some(d) = &q.delimiter {
        let bytes = d.as_bytes();
        if bytes.len() != 1 {
            return Err(ApiError::Invalid(format!("delimiter must be one byte, got `{d}`")));
        }
        opts.delimiter = bytes[0];
    }
    if let Some(h) = q.header {
        opts.header_row = h;
    }
    opts.id_column = q.id_column.clone();
    Ok(opts)
}

fn resolve_data_path(root: &FsPath, rel: &str) -> Result<PathBuf, ApiError> {
    let root = root
        .canonicalize()
        .map_err(|e| ApiError::Internal(format!("data dir: {e}")))?;
    let full = root
        .join(rel)
        .canonicalize()
        .map_err(|_| ApiError::Invalid(format!("no such file `{rel}` in the data directory")))?;
    if !full.starts_with(&root) {
        return Err(ApiError::Invalid(format!("path `{rel}` escapes the data directory")));
    }
    Ok(full)
}

/// Accepts a raw CSV body, a multipart upload (first file field), or JSON
/// `{"path": ...}` naming a file under the data directory.
async fn create_session(
    State(state): State<Shared>,
    Query(query): Query<LoadQuery>,
    req: Request,
) -> Result<Response, ApiError> {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    let (bytes, opts) = if content_type.starts_with("application/json") {
        let body = to_bytes(req.into_body(), MAX_UPLOAD)
            .await
            .map_err(|e| ApiError::Invalid(e.to_string()))?;
        let source: PathSource =
            serde_json::from_slice(&body).map_err(|e| ApiError::Invalid(e.to_string()))?;
        let root = state
            .config
            .data_dir
            .as_deref()
            .ok_or_else(|| ApiError::Invalid("server-side paths need a data directory".into()))?;
        let path = resolve_data_path(root, &source.path)?;
        let bytes = tokio::fs::read(&path)
            .await
            .map_err(|e| ApiError::Invalid(format!("reading `{}`: {e}", source.path)))?;
        (bytes, load_options(&source.options)?)
    } else if content_type.starts_with("multipart/form-data") {
        let mut multipart = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError::Invalid(e.body_text()))?;
        let field = multipart
            .next_field()
            .await
            .map_err(|e| ApiError::Invalid(e.body_text()))?
            .ok_or_else(|| ApiError::Invalid("multipart upload has no file field".into()))?;
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::Invalid(e.body_text()))?;
        (bytes.to_vec(), load_options(&query)?)
    } else {
        let body = to_bytes(req.into_body(), MAX_UPLOAD)
            .await
            .map_err(|e| ApiError::Invalid(e.to_string()))?;
        (body.to_vec(), load_options(&query)?)
    };
    let table: DataTable = blocking(move || load_csv(bytes.as_slice(), &opts)).await?;
    let metadata = table.metadata();
    let id = uuid::Uuid::new_v4().simple().to_string();
    let handle = Arc::new(SessionHandle {
        cancel: CancelToken::new(),
        inner: tokio::sync::Mutex::new(Session::new(id.clone(), table)),
    });
    state.sessions.write().await.insert(id.clone(), handle);
    log::info!("created session {id} ({} rows)", metadata.n_rows);
    Ok((
        StatusCode::CREATED,
        Json(json!({"session_id": id, "revision": 0, "table": metadata})),
    )
        .into_response())
}

async fn list_sessions(State(state): State<Shared>) -> Json<Value> {
    let mut ids: Vec<String> = state.sessions.read().await.keys().cloned().collect();
    ids.sort();
    Json(json!({ "sessions": ids }))
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let handle = state.handle(&id).await?;
    let s = handle.inner.lock().await;
    Ok(Json(json!({"session": s.summary(), "table": s.table.metadata()})))
}

async fn delete_session(State(state): State<Shared>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let handle = state
        .sessions
        .write()
        .await
        .remove(&id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown session `{id}`")))?;
    handle.cancel.cancel();
    log::info!("deleted session {id}");
    Ok(StatusCode::NO_CONTENT)
}

async fn table_page(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<TableQuery>,
) -> Result<Json<Value>, ApiError> {
    let handle = state.handle(&id).await?;
    let s = handle.inner.lock().await;
    Ok(Json(serde_json::to_value(s.table_page(&q)?).unwrap_or_default()))
}

#[derive(Debug, Deserialize)]
struct FilterBody {
    expr: Option<String>,
    keyword: Option<String>,
}

async fn set_filter(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<FilterBody>,
) -> Result<Json<Value>, ApiError> {
    let handle = state.handle(&id).await?;
    let mut s = handle.inner.lock().await;
    let matched = s.set_filter(body.expr, body.keyword)?;
    Ok(Json(json!({"revision": s.revision, "matched": matched})))
}

#[derive(Debug, Deserialize)]
struct FeaturesBody {
    names: Vec<String>,
}

async fn set_features(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<FeaturesBody>,
) -> Result<Json<Value>, ApiError> {
    let handle = state.handle(&id).await?;
    let mut s = handle.inner.lock().await;
    s.set_features(&body.names)?;
    Ok(Json(json!({"revision": s.revision, "features": s.view.feature_names()})))
}

async fn fit_clustering(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ClusterRequest>,
) -> Result<Json<Value>, ApiError> {
    let handle = state.handle(&id).await?;
    let mut s = handle.inner.lock().await;
    let view = s.view.clone();
    let cancel = handle.cancel.clone();
    let result = blocking(move || run_clustering(&view, &req, &cancel)).await?;
    let revision = s.revision;
    let body = json!({"revision": revision, "model": result.model, "profile": result.profile});
    s.clustering = Some(Fitted { revision, value: result });
    Ok(Json(body))
}

async fn fit_projection(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ProjectionRequest>,
) -> Result<Json<Value>, ApiError> {
    let handle = state.handle(&id).await?;
    let mut s = handle.inner.lock().await;
    let view = s.view.clone();
    let embedding = blocking(move || run_projection(&view, &req)).await?;
    let revision = s.revision;
    let labels = s.current_labels().map(<[usize]>::to_vec);
    let result = projection_result(&s.view, embedding.clone(), labels);
    s.projection = Some(Fitted { revision, value: embedding });
    let mut body = serde_json::to_value(result).unwrap_or_default();
    body["revision"] = json!(revision);
    Ok(Json(body))
}

async fn forward(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ForwardRequest>,
) -> Result<Json<Value>, ApiError> {
    let handle = state.handle(&id).await?;
    let s = handle.inner.lock().await;
    let result = run_forward(s.current_model()?, &s.view, &req)?;
    let mut body = serde_json::to_value(result).unwrap_or_default();
    body["revision"] = json!(s.revision);
    Ok(Json(body))
}

async fn prolines(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ProlineRequest>,
) -> Result<Json<Value>, ApiError> {
    let handle = state.handle(&id).await?;
    let s = handle.inner.lock().await;
    let lines = run_prolines(s.current_model()?, &s.view, &req)?;
    Ok(Json(json!({"revision": s.revision, "prolines": lines})))
}

async fn backward(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<BackwardRequest>,
) -> Result<Json<Value>, ApiError> {
    let handle = state.handle(&id).await?;
    let s = handle.inner.lock().await;
    let result = run_backward(s.current_model()?, &s.view, &req)?;
    let mut body = serde_json::to_value(result).unwrap_or_default();
    body["revision"] = json!(s.revision);
    Ok(Json(body))
}

async fn anova(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<AnovaRequest>,
) -> Result<Json<Value>, ApiError> {
    let handle = state.handle(&id).await?;
    let s = handle.inner.lock().await;
    let clustering = s.current_clustering()?;
    if let Some(bad) = req.cluster_ids.iter().find(|&&c| c >= clustering.model.k) {
        return Err(ApiError::Invalid(format!(
            "cluster id {bad} out of range for k = {}",
            clustering.model.k
        )));
    }
    let result = anova_by_clusters(&s.view, &clustering.model.labels, &req.feature, &req.cluster_ids)?;
    let mut body = serde_json::to_value(result).unwrap_or_default();
    body["revision"] = json!(s.revision);
    Ok(Json(body))
}

async fn correlations(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let handle = state.handle(&id).await?;
    let s = handle.inner.lock().await;
    let view = s.view.clone();
    let pairs = blocking(move || corr_pairs(&view)).await?;
    Ok(Json(serde_json::to_value(pairs).unwrap_or_default()))
}

async fn points(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let handle = state.handle(&id).await?;
    let s = handle.inner.lock().await;
    Ok(Json(serde_json::to_value(point_stats(&s.view)?).unwrap_or_default()))
}

async fn export(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = state.handle(&id).await?;
    let s = handle.inner.lock().await;
    let bytes = export_csv(&s.view);
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], Body::from(bytes)).into_response())
}

async fn snapshot(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let root = state
        .config
        .data_dir
        .clone()
        .ok_or_else(|| ApiError::Invalid("snapshots need a data directory".into()))?;
    let handle = state.handle(&id).await?;
    let s = handle.inner.lock().await;
    let snap = Snapshot {
        session: s.summary(),
        table: s.table.metadata(),
        projection: s.projection.as_ref(),
        clustering: s.clustering.as_ref(),
    };
    let bytes = serde_json::to_vec_pretty(&snap).map_err(|e| ApiError::Internal(e.to_string()))?;
    let dir = root.join("snapshots");
    tokio::fs::create_dir_all(&dir)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let path = dir.join(format!("{id}.json"));
    tokio::fs::write(&path, bytes)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(json!({"revision": s.revision, "path": path})))
}
