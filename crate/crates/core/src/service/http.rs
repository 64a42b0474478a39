//! HTTP/1.1 + JSON binding of [`CloudService`].
//!
//! Silence is `204 No Content`. Errors carry `{"error": code, "message": text}`.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query as UrlQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use super::{CloudService, ServiceConfig, ServiceError};
use crate::model::{
    Experiment, FunctionSpec, LifecycleEvent, ModelError, ParameterSet, TelemetryRecord, Vin,
};

pub const SESSION_HEADER: &str = "x-session-token";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

pub struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError(
            status,
            ErrorBody {
                error: code.into(),
                message: message.into(),
            },
        )
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::UnknownExperiment(_) | ServiceError::UnknownVariant(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::DuplicateExperiment(_) | ServiceError::IllegalState { .. } => {
                StatusCode::CONFLICT
            }
            ServiceError::UnknownSession => StatusCode::UNAUTHORIZED,
            ServiceError::BatchTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::Model(m) => match m {
                ModelError::UnknownFunction(_) => StatusCode::NOT_FOUND,
                ModelError::IllegalTransition { .. } | ModelError::LayerConflict { .. } => {
                    StatusCode::CONFLICT
                }
                _ => StatusCode::UNPROCESSABLE_ENTITY,
            },
            ServiceError::Store(_) | ServiceError::Audit(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
struct VinBody {
    vin: String,
}

#[derive(Debug, Deserialize)]
struct TokenBody {
    session_token: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DeviceToken {
    pub vin: Vin,
    pub device_token: String,
}

#[derive(Debug, Deserialize)]
struct EpochQuery {
    epoch: Option<u32>,
}

fn parse_vin(raw: &str) -> ApiResult<Vin> {
    Vin::parse(raw)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string()))
}

/// The full API router. Static dashboard assets are served from
/// `dashboard_dir` when given.
pub fn router(service: Arc<CloudService>, dashboard_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/handshake", post(handshake))
        .route("/poll", post(poll))
        .route("/sessions/close", post(close_session))
        .route("/devices", post(enroll))
        .route("/ingest", post(ingest))
        .route("/functions", get(list_functions).post(register_function))
        .route(
            "/experiments",
            get(list_experiments).post(create_experiment),
        )
        .route("/experiments/{id}", get(get_experiment))
        .route("/experiments/{id}/activate", post(activate))
        .route("/experiments/{id}/pause", post(pause))
        .route("/experiments/{id}/resume", post(resume))
        .route("/experiments/{id}/conclude", post(conclude))
        .route("/experiments/{id}/repartition", post(repartition))
        .route("/experiments/{id}/variants/{vid}/overrides", put(adjust))
        .route("/experiments/{id}/live", get(live))
        .route("/experiments/{id}/report", get(report))
        .route("/experiments/{id}/export.csv", get(export))
        .route("/experiments/{id}/audit", get(audit))
        .layer(DefaultBodyLimit::max(64 << 20))
        .with_state(service);
    match dashboard_dir {
        Some(dir) => api
            .fallback_service(tower_http::services::ServeDir::new(dir))
            .layer(tower_http::cors::CorsLayer::permissive()),
        None => api,
    }
}

async fn handshake(State(s): State<Arc<CloudService>>, Json(body): Json<VinBody>) -> Response {
    // Anything short of a valid indicator is silence, including a bad VIN.
    let Ok(vin) = Vin::parse(&body.vin) else {
        return StatusCode::NO_CONTENT.into_response();
    };
    match s.handshake(&vin, Utc::now()) {
        Some(indicator) => Json(indicator).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn poll(State(s): State<Arc<CloudService>>, Json(body): Json<TokenBody>) -> Response {
    match s.poll(&body.session_token, Utc::now()) {
        Some(indicator) => Json(indicator).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn close_session(
    State(s): State<Arc<CloudService>>,
    Json(body): Json<TokenBody>,
) -> StatusCode {
    s.close_session(&body.session_token);
    StatusCode::NO_CONTENT
}

async fn enroll(
    State(s): State<Arc<CloudService>>,
    Json(body): Json<VinBody>,
) -> ApiResult<Json<DeviceToken>> {
    let vin = parse_vin(&body.vin)?;
    let device_token = s.enroll(&vin);
    Ok(Json(DeviceToken { vin, device_token }))
}

async fn ingest(
    State(s): State<Arc<CloudService>>,
    headers: HeaderMap,
    Json(batch): Json<Vec<serde_json::Value>>,
) -> ApiResult<Response> {
    let token = headers
        .get(SESSION_HEADER)
        .and_then(|v| v.to_str().ok())
        .ok_or(ServiceError::UnknownSession)?
        .to_string();
    let parsed: Vec<Option<TelemetryRecord>> = batch
        .into_iter()
        .map(|v| serde_json::from_value(v).ok())
        .collect();
    let receipt = tokio::task::spawn_blocking(move || s.ingest_parsed(parsed, &token, Utc::now()))
        .await
        .map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
        })??;
    Ok(Json(receipt).into_response())
}

async fn list_functions(State(s): State<Arc<CloudService>>) -> Json<Vec<FunctionSpec>> {
    Json(s.functions())
}

async fn register_function(
    State(s): State<Arc<CloudService>>,
    Json(spec): Json<FunctionSpec>,
) -> ApiResult<StatusCode> {
    s.register_function(spec)?;
    Ok(StatusCode::CREATED)
}

async fn list_experiments(State(s): State<Arc<CloudService>>) -> Json<Vec<Experiment>> {
    Json(s.experiments())
}

async fn create_experiment(
    State(s): State<Arc<CloudService>>,
    Json(experiment): Json<Experiment>,
) -> ApiResult<(StatusCode, Json<Experiment>)> {
    Ok((
        StatusCode::CREATED,
        Json(s.create_experiment(experiment, Utc::now())?),
    ))
}

async fn get_experiment(
    State(s): State<Arc<CloudService>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Experiment>> {
    Ok(Json(s.experiment(&id)?))
}

fn lifecycle(s: &CloudService, id: &str, event: LifecycleEvent) -> ApiResult<Json<Experiment>> {
    Ok(Json(s.transition(id, event, Utc::now())?))
}

async fn activate(
    State(s): State<Arc<CloudService>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Experiment>> {
    lifecycle(&s, &id, LifecycleEvent::Activate)
}

async fn pause(
    State(s): State<Arc<CloudService>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Experiment>> {
    lifecycle(&s, &id, LifecycleEvent::Pause)
}

async fn resume(
    State(s): State<Arc<CloudService>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Experiment>> {
    lifecycle(&s, &id, LifecycleEvent::Resume)
}

async fn conclude(
    State(s): State<Arc<CloudService>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Experiment>> {
    lifecycle(&s, &id, LifecycleEvent::Conclude)
}

async fn repartition(
    State(s): State<Arc<CloudService>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Experiment>> {
    Ok(Json(s.repartition(&id, Utc::now())?))
}

async fn adjust(
    State(s): State<Arc<CloudService>>,
    UrlPath((id, vid)): UrlPath<(String, String)>,
    Json(overrides): Json<ParameterSet>,
) -> ApiResult<Json<Experiment>> {
    Ok(Json(s.steer_adjust(&id, &vid, overrides, Utc::now())?))
}

async fn live(
    State(s): State<Arc<CloudService>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    Ok(Json(s.query_live(&id)?).into_response())
}

async fn report(
    State(s): State<Arc<CloudService>>,
    UrlPath(id): UrlPath<String>,
    UrlQuery(q): UrlQuery<EpochQuery>,
) -> ApiResult<Response> {
    let report = tokio::task::spawn_blocking(move || s.report(&id, q.epoch))
        .await
        .map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
        })??;
    Ok(Json(report).into_response())
}

async fn export(
    State(s): State<Arc<CloudService>>,
    UrlPath(id): UrlPath<String>,
    UrlQuery(q): UrlQuery<EpochQuery>,
) -> ApiResult<Response> {
    let csv = s.export_csv(&id, q.epoch)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn audit(
    State(s): State<Arc<CloudService>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    s.experiment(&id)?;
    Ok(Json(s.audit(Some(&id))).into_response())
}

/// Builds the service described by `config`: opens the store and registers
/// the configured function specifications.
pub fn build_service(config: &ServiceConfig) -> anyhow::Result<CloudService> {
    let service = match &config.store_dir {
        Some(dir) => CloudService::open(config.clone(), dir)?,
        None => CloudService::new(config.clone()),
    };
    for path in &config.function_specs {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        let spec: FunctionSpec = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))?;
        service.register_function(spec)?;
    }
    Ok(service)
}

/// Runs the API until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let service = Arc::new(build_service(&config)?);
    let listener = tokio::net::TcpListener::bind(&config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    let app = router(service, config.dashboard_dir.as_deref());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// A server running on its own thread; stops when dropped.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serves `service` on `bind` from a background thread.
pub fn spawn(service: Arc<CloudService>, bind: &str) -> anyhow::Result<ServerHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(bind))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(service, None);
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
