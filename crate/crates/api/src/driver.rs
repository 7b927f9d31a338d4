//! The single writer. One thread owns the simulation; handlers talk to it
//! over a channel, so every mutation lands in one total order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot, watch};

use swaas_core::mesh::Link;
use swaas_core::model::EdgeProvider;
use swaas_core::placement::{Assignment, CostBreakdown};
use swaas_core::rm::{EnsembleState, QorReport, Transition};
use swaas_sim::{Accepted, Scenario, ScriptedEvent, SimError, Simulation};

use crate::command::{ApiCommand, ClockRequest, EventRequest, InstantiateRequest};
use crate::error::ApiError;
use crate::templates::{load_templates, TemplateFileError, TemplateListing, TemplateSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementDetail {
    /// The placement the resource manager last chose.
    pub assignment: Assignment,
    pub cost: Option<CostBreakdown>,
    /// Containers actually started and not yet stopped.
    pub running: Assignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusDocument {
    pub instance: String,
    pub template: String,
    pub state: EnsembleState,
    pub qor_report: Option<QorReport>,
    pub history: Vec<Transition>,
    pub replan_rounds: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<PlacementDetail>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub instance: String,
    pub template: String,
    pub state: EnsembleState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub now_ms: u64,
    /// `alive` reflects what the resource manager has detected.
    pub providers: Vec<EdgeProvider>,
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockState {
    pub now_ms: u64,
    pub duration_ms: u64,
}

/// Published trace lines plus a change signal for streaming readers.
pub struct Feed {
    lines: RwLock<Vec<Arc<str>>>,
    signal: watch::Sender<bool>,
}

impl Feed {
    fn new() -> Self {
        Feed { lines: RwLock::new(Vec::new()), signal: watch::channel(false).0 }
    }

    fn publish(&self, new: impl Iterator<Item = String>, finished: bool) {
        self.lines.write().expect("feed lock").extend(new.map(Arc::from));
        self.signal.send_replace(finished);
    }

    pub fn subscribe(&self) -> watch::Receiver<bool> {
        self.signal.subscribe()
    }

    /// Lines with seq greater than `since`, and whether the run is over.
    pub fn since(&self, since: u64) -> (Vec<Arc<str>>, bool) {
        let finished = *self.signal.borrow();
        let lines = self.lines.read().expect("feed lock");
        let from = (since as usize).min(lines.len());
        (lines[from..].to_vec(), finished)
    }

    pub fn len(&self) -> u64 {
        self.lines.read().expect("feed lock").len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) enum Request {
    Templates,
    Instantiate(InstantiateRequest),
    Inject(EventRequest),
    Teardown(String),
    Status { instance: String, placement: bool },
    Instances,
    Topology,
    Clock(ClockRequest),
    /// Wall-clock pacing: advance by up to this much, stopping at the horizon.
    Tick(u64),
}

pub(crate) enum Reply {
    Templates(TemplateListing),
    Accepted(Accepted),
    Status(StatusDocument),
    Instances(Vec<InstanceSummary>),
    Topology(TopologyDocument),
    Clock(ClockState),
}

struct Job {
    request: Request,
    reply: oneshot::Sender<Result<Reply, ApiError>>,
}

#[derive(Clone)]
pub struct Driver {
    tx: mpsc::Sender<Job>,
    feed: Arc<Feed>,
}

impl Driver {
    /// Builds the simulation and starts its thread.
    pub fn spawn(
        scenario: &Scenario,
        template_dir: Option<PathBuf>,
        record: Option<PathBuf>,
    ) -> Result<Driver, ApiError> {
        let sim = Simulation::new(scenario)?;
        let recorder = match record {
            Some(path) => Some(
                File::create(&path)
                    .map_err(|e| ApiError::BadRequest(format!("cannot create {}: {e}", path.display())))?,
            ),
            None => None,
        };
        let feed = Arc::new(Feed::new());
        let mut state = State { sim, template_dir, recorder, published: 0, feed: feed.clone(), queued: BTreeMap::new() };
        state.load_dir()?;
        state.sim.advance_to(0)?;
        state.publish();

        let (tx, mut rx) = mpsc::channel::<Job>(64);
        std::thread::Builder::new()
            .name("swaas-sim".into())
            .spawn(move || {
                while let Some(job) = rx.blocking_recv() {
                    let out = state.handle(job.request);
                    state.publish();
                    let _ = job.reply.send(out);
                }
            })
            .map_err(|e| ApiError::BadRequest(format!("cannot start the simulation thread: {e}")))?;
        Ok(Driver { tx, feed })
    }

    pub fn feed(&self) -> &Arc<Feed> {
        &self.feed
    }

    pub(crate) async fn call(&self, request: Request) -> Result<Reply, ApiError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(Job { request, reply }).await.map_err(|_| ApiError::DriverGone)?;
        rx.await.map_err(|_| ApiError::DriverGone)?
    }
}

struct State {
    sim: Simulation,
    template_dir: Option<PathBuf>,
    recorder: Option<File>,
    published: usize,
    feed: Arc<Feed>,
    /// Template of each instance accepted for a later time.
    queued: BTreeMap<String, String>,
}

impl State {
    fn publish(&mut self) {
        let lines = &self.sim.trace().lines;
        if self.published == lines.len() && !self.finished() {
            return;
        }
        let new: Vec<String> = lines[self.published..].iter().map(|l| l.to_json()).collect();
        self.published = lines.len();
        self.feed.publish(new.into_iter(), self.finished());
    }

    fn finished(&self) -> bool {
        self.sim.now() >= self.sim.duration_ms()
    }

    /// Adds any new templates from the template directory and returns the
    /// files that could not be used.
    fn load_dir(&mut self) -> Result<Vec<TemplateFileError>, ApiError> {
        let Some(dir) = &self.template_dir else { return Ok(Vec::new()) };
        let (templates, mut errors) = load_templates(dir)
            .map_err(|e| ApiError::BadRequest(format!("cannot read template directory {}: {e}", dir.display())))?;
        for t in templates {
            let id = t.id.clone();
            if let Err(e) = self.sim.add_template(t) {
                errors.push(TemplateFileError { file: id, error: e.to_string() });
            }
        }
        Ok(errors)
    }

    fn record(&mut self, command: ApiCommand) {
        if let Some(f) = &mut self.recorder {
            let line = serde_json::to_string(&command).expect("commands serialize");
            // a lost recording must not take the service down
            let _ = writeln!(f, "{line}").and_then(|_| f.flush());
        }
    }

    fn handle(&mut self, request: Request) -> Result<Reply, ApiError> {
        match request {
            Request::Templates => {
                let errors = self.load_dir()?;
                let templates = self.sim.templates().values().map(TemplateSummary::from).collect();
                Ok(Reply::Templates(TemplateListing { templates, errors }))
            }
            Request::Instantiate(req) => {
                if !self.sim.templates().contains_key(&req.template) {
                    self.load_dir()?;
                }
                let event = ScriptedEvent::Instantiate { template: req.template.clone(), instance: None, qor: req.qor.clone() };
                let accepted = self.inject(event, None)?;
                self.record(ApiCommand::Instantiate { template: req.template, qor: req.qor });
                Ok(Reply::Accepted(accepted))
            }
            Request::Inject(req) => {
                if let ScriptedEvent::Instantiate { template, .. } = &req.event {
                    if !self.sim.templates().contains_key(template) {
                        self.load_dir()?;
                    }
                }
                let accepted = self.inject(req.event.clone(), req.at_ms)?;
                self.record(ApiCommand::Inject { at_ms: req.at_ms, event: req.event });
                Ok(Reply::Accepted(accepted))
            }
            Request::Teardown(instance) => {
                let accepted = self.inject(ScriptedEvent::Teardown { instance: instance.clone() }, None)?;
                self.record(ApiCommand::Teardown { instance });
                Ok(Reply::Accepted(accepted))
            }
            Request::Status { instance, placement } => Ok(Reply::Status(self.status(&instance, placement)?)),
            Request::Instances => Ok(Reply::Instances(self.instances())),
            Request::Topology => Ok(Reply::Topology(TopologyDocument {
                now_ms: self.sim.now(),
                providers: self.sim.view().cloned().collect(),
                links: self.sim.view_topology().links().cloned().collect(),
            })),
            Request::Clock(req) => {
                let to_ms = match (req.advance_ms, req.to_ms) {
                    (Some(d), None) => self.sim.now().saturating_add(d),
                    (None, Some(t)) => t,
                    _ => return Err(ApiError::BadRequest("give exactly one of advance_ms and to_ms".into())),
                };
                self.advance(to_ms)
            }
            Request::Tick(ms) => {
                let to_ms = self.sim.now().saturating_add(ms).min(self.sim.duration_ms());
                self.advance(to_ms)
            }
        }
    }

    fn advance(&mut self, to_ms: u64) -> Result<Reply, ApiError> {
        if to_ms != self.sim.now() {
            self.sim.advance_to(to_ms)?;
            self.record(ApiCommand::AdvanceClock { to_ms });
        }
        Ok(Reply::Clock(ClockState { now_ms: self.sim.now(), duration_ms: self.sim.duration_ms() }))
    }

    /// Queues the command and processes everything due at the current
    /// instant, so an instantiate is visible to the next status call.
    fn inject(&mut self, event: ScriptedEvent, at_ms: Option<u64>) -> Result<Accepted, SimError> {
        let template = match &event {
            ScriptedEvent::Instantiate { template, .. } => Some(template.clone()),
            _ => None,
        };
        let accepted = self.sim.inject(event, at_ms)?;
        if let (Some(t), Some(id)) = (template, &accepted.instance) {
            self.queued.insert(id.clone(), t);
        }
        self.sim.advance_to(self.sim.now())?;
        Ok(accepted)
    }

    fn status(&self, instance: &str, placement: bool) -> Result<StatusDocument, ApiError> {
        let Some(e) = self.sim.ensemble(instance) else {
            if self.sim.is_reserved(instance) {
                return Ok(StatusDocument {
                    instance: instance.to_string(),
                    template: self.queued.get(instance).cloned().unwrap_or_default(),
                    state: EnsembleState::Pending,
                    qor_report: None,
                    history: Vec::new(),
                    replan_rounds: 0,
                    placement: None,
                });
            }
            return Err(SimError::UnknownInstance(instance.to_string()).into());
        };
        let placement = placement.then(|| {
            PlacementDetail {
                assignment: e.placement.as_ref().map(|p| p.assignment.clone()).unwrap_or_default(),
                cost: e.placement.as_ref().map(|p| p.cost),
                running: e.running.clone(),
            }
        });
        Ok(StatusDocument {
            instance: e.id.clone(),
            template: e.template.id.clone(),
            state: e.state,
            qor_report: e.qor_report.clone(),
            history: e.history.clone(),
            replan_rounds: e.replan_rounds,
            placement,
        })
    }

    fn instances(&self) -> Vec<InstanceSummary> {
        self.sim
            .ensembles()
            .values()
            .map(|e| InstanceSummary { instance: e.id.clone(), template: e.template.id.clone(), state: e.state })
            .collect()
    }
}
