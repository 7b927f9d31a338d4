use std::convert::Infallible;
use std::path::PathBuf;
use std::time::Duration;

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tower_http::services::ServeDir;

use swaas_sim::Scenario;

use crate::command::{ClockRequest, EventRequest, InstantiateRequest};
use crate::driver::{Driver, Reply, Request};
use crate::error::ApiError;

pub const DEFAULT_LISTEN_ADDR: &str = "127.0.0.1:7070";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub scenario: Scenario,
    pub template_dir: Option<PathBuf>,
    /// Appends every accepted mutation to this file as a replayable session.
    pub record: Option<PathBuf>,
    /// Advance virtual time by this much every this many wall-clock ms.
    /// Without it the clock only moves on `POST /v1/clock`.
    pub tick_ms: Option<u64>,
    pub console_dir: Option<PathBuf>,
}

impl ServerConfig {
    pub fn new(scenario: Scenario) -> Self {
        ServerConfig { scenario, template_dir: None, record: None, tick_ms: None, console_dir: None }
    }
}

fn body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(t)| t).map_err(|e| ApiError::BadRequest(e.body_text()))
}

async fn templates(State(d): State<Driver>) -> Result<Response, ApiError> {
    match d.call(Request::Templates).await? {
        Reply::Templates(listing) => Ok(Json(listing).into_response()),
        _ => unreachable!("templates reply"),
    }
}

async fn accepted(d: &Driver, request: Request) -> Result<Response, ApiError> {
    match d.call(request).await? {
        Reply::Accepted(a) => Ok((StatusCode::ACCEPTED, Json(a)).into_response()),
        _ => unreachable!("accepted reply"),
    }
}

async fn instantiate(
    State(d): State<Driver>,
    req: Result<Json<InstantiateRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    accepted(&d, Request::Instantiate(body(req)?)).await
}

async fn instances(State(d): State<Driver>) -> Result<Response, ApiError> {
    match d.call(Request::Instances).await? {
        Reply::Instances(list) => Ok(Json(list).into_response()),
        _ => unreachable!("instances reply"),
    }
}

#[derive(Debug, Deserialize)]
struct StatusQuery {
    detail: Option<String>,
}

async fn status(
    State(d): State<Driver>,
    Path(id): Path<String>,
    Query(q): Query<StatusQuery>,
) -> Result<Response, ApiError> {
    let placement = match q.detail.as_deref() {
        None => false,
        Some("placement") => true,
        Some(other) => return Err(ApiError::BadRequest(format!("unknown detail {other:?}"))),
    };
    match d.call(Request::Status { instance: id, placement }).await? {
        Reply::Status(doc) => Ok(Json(doc).into_response()),
        _ => unreachable!("status reply"),
    }
}

async fn teardown(State(d): State<Driver>, Path(id): Path<String>) -> Result<Response, ApiError> {
    accepted(&d, Request::Teardown(id)).await
}

async fn events(
    State(d): State<Driver>,
    req: Result<Json<EventRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    accepted(&d, Request::Inject(body(req)?)).await
}

async fn topology(State(d): State<Driver>) -> Result<Response, ApiError> {
    match d.call(Request::Topology).await? {
        Reply::Topology(doc) => Ok(Json(doc).into_response()),
        _ => unreachable!("topology reply"),
    }
}

async fn clock_get(State(d): State<Driver>) -> Result<Response, ApiError> {
    clock(&d, ClockRequest { advance_ms: Some(0), to_ms: None }).await
}

async fn clock_post(
    State(d): State<Driver>,
    req: Result<Json<ClockRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    clock(&d, body(req)?).await
}

async fn clock(d: &Driver, req: ClockRequest) -> Result<Response, ApiError> {
    match d.call(Request::Clock(req)).await? {
        Reply::Clock(c) => Ok(Json(c).into_response()),
        _ => unreachable!("clock reply"),
    }
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    #[serde(default)]
    since: u64,
}

/// Trace lines after `since` as NDJSON. The response stays open until the
/// simulation reaches its horizon.
async fn stream(State(d): State<Driver>, Query(q): Query<StreamQuery>) -> Response {
    let feed = d.feed().clone();
    let rx = feed.subscribe();
    let lines = futures::stream::unfold((feed, rx, q.since), |(feed, mut rx, cursor)| async move {
        loop {
            rx.borrow_and_update();
            let (batch, finished) = feed.since(cursor);
            if !batch.is_empty() {
                let mut chunk = String::new();
                for line in &batch {
                    chunk.push_str(line);
                    chunk.push('\n');
                }
                let next = cursor + batch.len() as u64;
                return Some((Ok::<_, Infallible>(chunk), (feed, rx, next)));
            }
            if finished || rx.changed().await.is_err() {
                return None;
            }
        }
    });
    ([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(lines)).into_response()
}

pub fn router(driver: Driver, console_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/v1/templates", get(templates))
        .route("/v1/instances", post(instantiate).get(instances))
        .route("/v1/instances/{id}", get(status).delete(teardown))
        .route("/v1/events", post(events))
        .route("/v1/stream", get(stream))
        .route("/v1/topology", get(topology))
        .route("/v1/clock", get(clock_get).post(clock_post))
        .with_state(driver);
    match console_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Starts the simulation thread and returns the app plus its driver.
pub fn app(config: &ServerConfig) -> Result<(Router, Driver), ApiError> {
    let driver = Driver::spawn(&config.scenario, config.template_dir.clone(), config.record.clone())?;
    Ok((router(driver.clone(), config.console_dir.clone()), driver))
}

/// Serves on `listener` until the process is stopped.
pub async fn serve(config: ServerConfig, listener: tokio::net::TcpListener) -> Result<(), ServeError> {
    let (app, driver) = app(&config)?;
    if let Some(tick) = config.tick_ms.filter(|t| *t > 0) {
        tokio::spawn(async move {
            let mut every = tokio::time::interval(Duration::from_millis(tick));
            loop {
                every.tick().await;
                if driver.call(Request::Tick(tick)).await.is_err() {
                    break;
                }
            }
        });
    }
    axum::serve(listener, app).await?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
