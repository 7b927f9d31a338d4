use std::io::{BufRead, BufReader};

use reqwest::blocking::{Client as Http, RequestBuilder, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use swaas_sim::{Accepted, ScriptedEvent};

use crate::command::{ApiCommand, ClockRequest, EventRequest, InstantiateRequest};
use crate::driver::{ClockState, InstanceSummary, StatusDocument, TopologyDocument};
use crate::error::ErrorBody;
use crate::templates::TemplateListing;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{}: {}", .body.error, .body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("cannot reach the server: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    /// 4xx responses are the caller's fault.
    pub fn is_validation(&self) -> bool {
        matches!(self, ClientError::Api { status, .. } if (400..500).contains(status))
    }
}

/// Blocking client for a running server.
pub struct Client {
    base: String,
    http: Http,
}

impl Client {
    /// `addr` is `host:port` or a full `http://` URL.
    pub fn new(addr: &str) -> Self {
        let base = if addr.starts_with("http://") || addr.starts_with("https://") {
            addr.trim_end_matches('/').to_string()
        } else {
            format!("http://{addr}")
        };
        Client { base, http: Http::builder().timeout(None).build().expect("http client builds") }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn send(&self, req: RequestBuilder) -> Result<Response, ClientError> {
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if resp.status().is_success() {
            return Ok(resp);
        }
        let text = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        let body = serde_json::from_str(&text)
            .unwrap_or_else(|_| ErrorBody { error: format!("HTTP {status}"), message: text });
        Err(ClientError::Api { status, body })
    }

    fn json<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, ClientError> {
        let text = self.send(req)?.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        self.json(self.http.post(self.url(path)).json(body))
    }

    pub fn templates(&self) -> Result<TemplateListing, ClientError> {
        self.json(self.http.get(self.url("/v1/templates")))
    }

    pub fn instantiate(&self, req: &InstantiateRequest) -> Result<Accepted, ClientError> {
        self.post("/v1/instances", req)
    }

    pub fn instances(&self) -> Result<Vec<InstanceSummary>, ClientError> {
        self.json(self.http.get(self.url("/v1/instances")))
    }

    pub fn status(&self, instance: &str, placement: bool) -> Result<StatusDocument, ClientError> {
        let mut req = self.http.get(self.url(&format!("/v1/instances/{instance}")));
        if placement {
            req = req.query(&[("detail", "placement")]);
        }
        self.json(req)
    }

    pub fn inject(&self, event: ScriptedEvent, at_ms: Option<u64>) -> Result<Accepted, ClientError> {
        self.post("/v1/events", &EventRequest { at_ms, event })
    }

    pub fn teardown(&self, instance: &str) -> Result<Accepted, ClientError> {
        self.json(self.http.delete(self.url(&format!("/v1/instances/{instance}"))))
    }

    pub fn topology(&self) -> Result<TopologyDocument, ClientError> {
        self.json(self.http.get(self.url("/v1/topology")))
    }

    pub fn clock(&self, req: &ClockRequest) -> Result<ClockState, ClientError> {
        self.post("/v1/clock", req)
    }

    /// Calls `each` for every streamed trace line until the server closes
    /// the stream.
    pub fn stream(&self, since: u64, mut each: impl FnMut(&str)) -> Result<(), ClientError> {
        let resp = self.send(self.http.get(self.url("/v1/stream")).query(&[("since", since)]))?;
        for line in BufReader::new(resp).lines() {
            let line = line.map_err(|e| ClientError::Transport(e.to_string()))?;
            each(&line);
        }
        Ok(())
    }

    /// Sends one recorded command. Read-only commands are sent too, so a
    /// session can include status checks.
    pub fn apply(&self, command: &ApiCommand) -> Result<serde_json::Value, ClientError> {
        fn v<T: Serialize>(r: Result<T, ClientError>) -> Result<serde_json::Value, ClientError> {
            r.map(|x| serde_json::to_value(x).expect("responses serialize"))
        }
        match command {
            ApiCommand::ListTemplates => v(self.templates()),
            ApiCommand::Instantiate { template, qor } => {
                v(self.instantiate(&InstantiateRequest { template: template.clone(), qor: qor.clone() }))
            }
            ApiCommand::Status { instance, placement } => v(self.status(instance, *placement)),
            ApiCommand::Inject { at_ms, event } => v(self.inject(event.clone(), *at_ms)),
            ApiCommand::Teardown { instance } => v(self.teardown(instance)),
            ApiCommand::AdvanceClock { to_ms } => v(self.clock(&ClockRequest { advance_ms: None, to_ms: Some(*to_ms) })),
            ApiCommand::RunScenario { .. } => Err(ClientError::Decode("run-scenario is local, not a server call".into())),
        }
    }
}
