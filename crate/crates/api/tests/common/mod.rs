#![allow(dead_code)]

use std::path::PathBuf;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tower::ServiceExt;

use swaas_api::{app, ApiCommand, ServerConfig};
use swaas_sim::Scenario;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn scenario(relative: &str) -> Scenario {
    Scenario::load(&fixtures().join(relative)).unwrap_or_else(|e| panic!("{relative}: {e}"))
}

/// A fresh server over the F1 swarm with an empty timeline and the shipped
/// template directory.
pub fn swarm() -> Router {
    server(ServerConfig { template_dir: Some(fixtures().join("templates")), ..ServerConfig::new(scenario("api/swarm.json")) })
}

pub fn server(config: ServerConfig) -> Router {
    app(&config).unwrap().0
}

pub struct Reply {
    pub status: StatusCode,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }
}

pub async fn call(router: &Router, method: Method, path: &str, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(path);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = router.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    Reply { status, text: String::from_utf8(bytes.to_vec()).unwrap() }
}

pub async fn get(router: &Router, path: &str) -> Reply {
    call(router, Method::GET, path, None).await
}

pub async fn post(router: &Router, path: &str, body: Value) -> Reply {
    call(router, Method::POST, path, Some(body)).await
}

pub async fn clock_to(router: &Router, to_ms: u64) -> Reply {
    post(router, "/v1/clock", serde_json::json!({ "to_ms": to_ms })).await
}

/// The whole stream from `since`; the server must already be at its horizon.
pub async fn stream_all(router: &Router, since: u64) -> String {
    let path = format!("/v1/stream?since={since}");
    let fut = get(router, &path);
    let reply = tokio::time::timeout(Duration::from_secs(10), fut).await.expect("stream ends at the horizon");
    assert_eq!(reply.status, StatusCode::OK);
    reply.text
}

/// The first chunk of a live stream, or `None` if nothing arrives in time.
pub async fn first_chunk(body: &mut Body, wait: Duration) -> Option<String> {
    let frame = tokio::time::timeout(wait, body.frame()).await.ok()??.ok()?;
    frame.into_data().ok().map(|b| String::from_utf8(b.to_vec()).unwrap())
}

pub async fn open_stream(router: &Router, since: u64) -> Body {
    let req = Request::builder().uri(format!("/v1/stream?since={since}")).body(Body::empty()).unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "application/x-ndjson");
    resp.into_body()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn seqs(ndjson: &str) -> Vec<u64> {
    ndjson.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["seq"].as_u64().unwrap()).collect()
}

/// Sends one recorded command over HTTP and returns the reply.
pub async fn apply(router: &Router, command: &ApiCommand) -> Reply {
    use serde_json::json;
    match command {
        ApiCommand::ListTemplates => get(router, "/v1/templates").await,
        ApiCommand::Instantiate { template, qor } => {
            post(router, "/v1/instances", json!({ "template": template, "qor": qor })).await
        }
        ApiCommand::Status { instance, placement } => {
            let q = if *placement { "?detail=placement" } else { "" };
            get(router, &format!("/v1/instances/{instance}{q}")).await
        }
        ApiCommand::Inject { at_ms, event } => {
            let mut body = serde_json::to_value(event).unwrap();
            if let Some(t) = at_ms {
                body["at_ms"] = json!(t);
            }
            post(router, "/v1/events", body).await
        }
        ApiCommand::Teardown { instance } => call(router, Method::DELETE, &format!("/v1/instances/{instance}"), None).await,
        ApiCommand::AdvanceClock { to_ms } => clock_to(router, *to_ms).await,
        ApiCommand::RunScenario { .. } => panic!("not a server command"),
    }
}

pub fn session(relative: &str) -> Vec<ApiCommand> {
    swaas_api::parse_session(&std::fs::read_to_string(fixtures().join(relative)).unwrap()).unwrap()
}

/// Replays `commands` against `router`, asserting every call succeeds, and
/// returns the full trace.
pub async fn replay(router: &Router, commands: &[ApiCommand]) -> String {
    for c in commands {
        let r = apply(router, c).await;
        assert!(r.status.is_success(), "{c:?}: {} {}", r.status, r.text);
    }
    stream_all(router, 0).await
}
