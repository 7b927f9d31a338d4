//! Runtime Resource Manager: the ensemble lifecycle as a pure transition
//! function over (instance, world, event).
//!
//! `handle_event` never performs effects. It returns the next instance and a
//! list of [`Action`]s for the caller (simulator or a real backend) to carry
//! out.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{MeshEvent, MeshTopology};
use crate::model::{AsreTemplate, EdgeProvider, InstanceId, QoROverrides, QoRSpec};
use crate::placement::{
    end_to_end_latency, exhaustive_oracle, replan, search_space_size, Assignment, OracleOutcome, PlacementError,
    PlacementProblem, PlacementSolution, Slot, Violation, DEFAULT_REPLAN_GAMMA,
};

mod degrade;
mod detector;

pub use degrade::{degradation_ladder, select_degraded_mode, Degradation, Rung, LATENCY_RELAXATION};
pub use detector::{
    detect_failures, update_reliability, update_reliability_with, Observation, ReliabilityRecord, DEFAULT_LAMBDA,
};

/// Largest search space for which a missed heuristic re-plan is retried with
/// the exhaustive oracle.
pub const DEFAULT_EXACT_LIMIT: f64 = 2e5;
pub const DEFAULT_MAX_REPLAN_ROUNDS: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RmError {
    #[error("event at {event_ms} ms precedes last processed event at {last_ms} ms")]
    StaleEvent { event_ms: u64, last_ms: u64 },
    #[error("unknown ensemble instance {0:?}")]
    UnknownInstance(String),
    #[error("instantiate request for template {requested:?} sent to an instance of {actual:?}")]
    TemplateMismatch { requested: String, actual: String },
    #[error(transparent)]
    Placement(#[from] PlacementError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EnsembleState {
    Pending,
    Provisioning,
    Active,
    Degraded,
    Reconfiguring,
    Failed,
    TornDown,
}

impl fmt::Display for EnsembleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub time_ms: u64,
    pub from: EnsembleState,
    pub to: EnsembleState,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QorReport {
    /// QoR the current placement is held to; differs from the template's
    /// when degraded.
    pub effective: QoRSpec,
    pub degraded: bool,
    pub rationale: Option<String>,
    pub latency_ms: Option<f64>,
    pub sensing_nodes: u32,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleInstance {
    pub id: String,
    /// The template with any instantiate-time QoR overrides applied.
    pub template: AsreTemplate,
    pub state: EnsembleState,
    pub placement: Option<PlacementSolution>,
    /// Containers currently started and not yet stopped.
    pub running: Assignment,
    pub qor_report: Option<QorReport>,
    pub history: Vec<Transition>,
    /// Resolution attempts since the instance last settled.
    pub replan_rounds: u32,
    pub last_event_ms: u64,
}

impl EnsembleInstance {
    pub fn new(id: impl Into<String>, template: AsreTemplate) -> Self {
        EnsembleInstance {
            id: id.into(),
            template,
            state: EnsembleState::Pending,
            placement: None,
            running: Assignment::new(),
            qor_report: None,
            history: Vec::new(),
            replan_rounds: 0,
            last_event_ms: 0,
        }
    }

    pub fn effective_qor(&self) -> &QoRSpec {
        self.qor_report.as_ref().map_or(&self.template.qor, |r| &r.effective)
    }

    fn transition(&mut self, time_ms: u64, to: EnsembleState, cause: &str) {
        if self.state != to {
            self.history.push(Transition { time_ms, from: self.state, to, cause: cause.to_string() });
            self.state = to;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum Action {
    StartContainer {
        ensemble: String,
        instance: InstanceId,
        #[serde(flatten)]
        slot: Slot,
    },
    StopContainer {
        ensemble: String,
        instance: InstanceId,
        #[serde(flatten)]
        slot: Slot,
    },
    EmitAlert {
        ensemble: String,
        message: String,
    },
    RequestReplan {
        ensemble: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum RmEventKind {
    NodeFailed { provider: String },
    NodeJoined { provider: EdgeProvider },
    LinkChanged { change: MeshEvent },
    QorViolated { instance: String, violation: String },
    InstantiateRequest { template: String, #[serde(default)] overrides: QoROverrides },
    TeardownRequest { instance: String },
    /// A previously requested re-plan has finished its processing delay.
    ReplanDue { instance: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmEvent {
    pub time_ms: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: RmEventKind,
}

impl RmEvent {
    pub fn new(time_ms: u64, seq: u64, kind: RmEventKind) -> Self {
        RmEvent { time_ms, seq, kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmConfig {
    pub gamma: f64,
    pub max_replan_rounds: u32,
    pub exact_limit: f64,
}

impl Default for RmConfig {
    fn default() -> Self {
        RmConfig { gamma: DEFAULT_REPLAN_GAMMA, max_replan_rounds: DEFAULT_MAX_REPLAN_ROUNDS, exact_limit: DEFAULT_EXACT_LIMIT }
    }
}

/// What the RM knows when handling one event. Provider capacities are
/// already net of containers held by other ensembles.
#[derive(Debug, Clone)]
pub struct World {
    pub providers: Vec<EdgeProvider>,
    pub topology: MeshTopology,
    pub reliability: BTreeMap<String, f64>,
    pub config: RmConfig,
}

/// Heuristic re-plan, falling back to the exhaustive oracle when the
/// heuristic misses and the search space is at most `exact_limit`.
pub fn plan(problem: &PlacementProblem, exact_limit: f64) -> Result<PlacementSolution, PlacementError> {
    let heuristic = replan(problem)?;
    if heuristic.feasible || search_space_size(problem) > exact_limit {
        return Ok(heuristic);
    }
    match exhaustive_oracle(problem)? {
        OracleOutcome::Optimal(s) => Ok(s),
        OracleOutcome::Infeasible => Ok(heuristic),
    }
}

fn problem_for(inst: &EnsembleInstance, world: &World, qor: &QoRSpec, with_previous: bool) -> Result<PlacementProblem, RmError> {
    let mut template = inst.template.clone();
    template.qor = qor.clone();
    let mut problem = PlacementProblem::new(template, world.providers.clone(), world.topology.clone())?
        .with_reliability(world.reliability.clone());
    if with_previous {
        if let Some(prev) = &inst.placement {
            problem = problem.with_previous(prev.clone(), world.config.gamma);
        }
    }
    Ok(problem)
}

fn nominal_feasible(inst: &EnsembleInstance, world: &World) -> Result<bool, RmError> {
    let problem = problem_for(inst, world, &inst.template.qor, true)?;
    Ok(match plan(&problem, world.config.exact_limit) {
        Ok(s) => s.feasible,
        Err(PlacementError::NoProviders) => false,
        Err(e) => return Err(e.into()),
    })
}

fn any_mode_feasible(inst: &EnsembleInstance, world: &World) -> Result<bool, RmError> {
    if nominal_feasible(inst, world)? {
        return Ok(true);
    }
    for (_, qor) in degradation_ladder(&inst.template.qor) {
        let problem = problem_for(inst, world, &qor, true)?;
        if plan(&problem, world.config.exact_limit).is_ok_and(|s| s.feasible) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Whether the current placement's cost or feasibility differs on `world`.
fn placement_affected(inst: &EnsembleInstance, world: &World) -> Result<bool, RmError> {
    let Some(current) = &inst.placement else { return Ok(false) };
    let problem = problem_for(inst, world, inst.effective_qor(), false)?;
    let now = problem.evaluate(current.assignment.clone());
    let diff = (now.cost.comm_ms - current.cost.comm_ms).abs();
    Ok(!now.feasible || diff > 1e-9 * current.cost.comm_ms.abs().max(1.0))
}

fn uses_provider(inst: &EnsembleInstance, provider: &str) -> bool {
    inst.running.values().any(|s| s.provider == provider)
        || inst.placement.as_ref().is_some_and(|p| p.assignment.values().any(|s| s.provider == provider))
}

fn stop_on(inst: &mut EnsembleInstance, provider: &str) -> Vec<Action> {
    let gone: Vec<InstanceId> = inst.running.iter().filter(|(_, s)| s.provider == provider).map(|(i, _)| i.clone()).collect();
    gone.into_iter()
        .map(|instance| {
            let slot = inst.running.remove(&instance).expect("collected from running");
            Action::StopContainer { ensemble: inst.id.clone(), instance, slot }
        })
        .collect()
}

fn stop_all(inst: &mut EnsembleInstance) -> Vec<Action> {
    let running = std::mem::take(&mut inst.running);
    running
        .into_iter()
        .map(|(instance, slot)| Action::StopContainer { ensemble: inst.id.clone(), instance, slot })
        .collect()
}

fn request_replan(inst: &mut EnsembleInstance, time_ms: u64, cause: &str) -> Vec<Action> {
    inst.transition(time_ms, EnsembleState::Reconfiguring, cause);
    vec![Action::RequestReplan { ensemble: inst.id.clone() }]
}

fn report(problem: &PlacementProblem, solution: &PlacementSolution, rationale: Option<String>) -> QorReport {
    let sensing_nodes = solution
        .assignment
        .iter()
        .filter(|(id, _)| problem.template.service(&id.service).is_some_and(|s| s.is_sensing()))
        .map(|(_, s)| s.provider.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len() as u32;
    QorReport {
        effective: problem.template.qor.clone(),
        degraded: rationale.is_some(),
        rationale,
        latency_ms: end_to_end_latency(problem, &solution.assignment).ok(),
        sensing_nodes,
        violations: solution.violations.clone(),
    }
}

/// Switch to `solution`: stop what moves or disappears, start what is new.
fn commit(
    inst: &mut EnsembleInstance,
    problem: &PlacementProblem,
    solution: PlacementSolution,
    rationale: Option<String>,
    to: EnsembleState,
    time_ms: u64,
) -> Vec<Action> {
    let mut actions = Vec::new();
    for (instance, slot) in &inst.running {
        if solution.assignment.get(instance) != Some(slot) {
            actions.push(Action::StopContainer { ensemble: inst.id.clone(), instance: instance.clone(), slot: slot.clone() });
        }
    }
    for (instance, slot) in &solution.assignment {
        if inst.running.get(instance) != Some(slot) {
            actions.push(Action::StartContainer { ensemble: inst.id.clone(), instance: instance.clone(), slot: slot.clone() });
        }
    }
    if let Some(message) = &rationale {
        actions.push(Action::EmitAlert { ensemble: inst.id.clone(), message: format!("degraded: {message}") });
    }
    inst.running = solution.assignment.clone();
    inst.qor_report = Some(report(problem, &solution, rationale));
    inst.placement = Some(solution);
    inst.replan_rounds = 0;
    inst.transition(time_ms, to, "replan");
    actions
}

fn resolve(inst: &mut EnsembleInstance, world: &World, time_ms: u64) -> Result<Vec<Action>, RmError> {
    inst.replan_rounds += 1;
    let nominal = inst.template.qor.clone();
    let problem = problem_for(inst, world, &nominal, true)?;
    let best = match plan(&problem, world.config.exact_limit) {
        Ok(s) => Some(s),
        Err(PlacementError::NoProviders) => None,
        Err(e) => return Err(e.into()),
    };
    if let Some(s) = best.as_ref().filter(|s| s.feasible) {
        return Ok(commit(inst, &problem, s.clone(), None, EnsembleState::Active, time_ms));
    }
    if let Some(best) = &best {
        if let Degradation::Reduced { qor, solution, rationale, .. } =
            select_degraded_mode(&problem, &nominal, best, world.config.exact_limit)
        {
            let mut reduced = problem.clone();
            reduced.template.qor = qor;
            return Ok(commit(inst, &reduced, solution, Some(rationale), EnsembleState::Degraded, time_ms));
        }
    }
    if inst.state == EnsembleState::Reconfiguring && inst.replan_rounds < world.config.max_replan_rounds {
        return Ok(vec![Action::RequestReplan { ensemble: inst.id.clone() }]);
    }
    let why = match &best {
        Some(s) => s.violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
        None => "no live providers".to_string(),
    };
    inst.replan_rounds = 0;
    inst.transition(time_ms, EnsembleState::Failed, "replan");
    Ok(vec![Action::EmitAlert { ensemble: inst.id.clone(), message: format!("failed: no feasible placement ({why})") }])
}

/// The ensemble lifecycle transition function.
pub fn handle_event(
    instance: &EnsembleInstance,
    world: &World,
    event: &RmEvent,
) -> Result<(EnsembleInstance, Vec<Action>), RmError> {
    use EnsembleState::*;
    use RmEventKind::*;

    if event.time_ms < instance.last_event_ms {
        return Err(RmError::StaleEvent { event_ms: event.time_ms, last_ms: instance.last_event_ms });
    }
    match &event.kind {
        QorViolated { instance: id, .. } | TeardownRequest { instance: id } | ReplanDue { instance: id }
            if *id != instance.id =>
        {
            return Err(RmError::UnknownInstance(id.clone()));
        }
        InstantiateRequest { template, .. } if *template != instance.template.id => {
            return Err(RmError::TemplateMismatch { requested: template.clone(), actual: instance.template.id.clone() });
        }
        _ => {}
    }

    let mut next = instance.clone();
    next.last_event_ms = event.time_ms;
    let t = event.time_ms;
    let state = next.state;

    let actions = match (&event.kind, state) {
        (_, TornDown) => Vec::new(),
        (TeardownRequest { .. }, _) => {
            let actions = stop_all(&mut next);
            next.transition(t, TornDown, "teardown-request");
            actions
        }
        (InstantiateRequest { overrides, .. }, Pending) => {
            next.template.qor = overrides.apply(&next.template.qor);
            next.transition(t, Provisioning, "instantiate-request");
            vec![Action::RequestReplan { ensemble: next.id.clone() }]
        }
        (_, Pending) => Vec::new(),
        (ReplanDue { .. }, Provisioning | Reconfiguring) => resolve(&mut next, world, t)?,
        (NodeFailed { provider }, Active | Degraded)
            if uses_provider(&next, provider) || placement_affected(&next, world)? =>
        {
            let mut actions = stop_on(&mut next, provider);
            actions.extend(request_replan(&mut next, t, &format!("node-failed:{provider}")));
            actions
        }
        (NodeFailed { provider }, _) => stop_on(&mut next, provider),
        (LinkChanged { change }, Active | Degraded) if placement_affected(&next, world)? => {
            request_replan(&mut next, t, &format!("link-changed:{}", describe_change(change)))
        }
        (QorViolated { violation, .. }, Active | Degraded) => {
            request_replan(&mut next, t, &format!("qor-violated:{violation}"))
        }
        (NodeJoined { .. } | LinkChanged { .. }, Degraded) if nominal_feasible(&next, world)? => {
            request_replan(&mut next, t, &resource_cause(&event.kind))
        }
        (NodeJoined { .. } | LinkChanged { .. }, Failed) if any_mode_feasible(&next, world)? => {
            request_replan(&mut next, t, &resource_cause(&event.kind))
        }
        _ => Vec::new(),
    };
    Ok((next, actions))
}

fn describe_change(change: &MeshEvent) -> String {
    match change {
        MeshEvent::LinkUp { a, b } => format!("up:{a}-{b}"),
        MeshEvent::LinkDown { a, b } => format!("down:{a}-{b}"),
        MeshEvent::NodeLeave { provider } => format!("leave:{provider}"),
        MeshEvent::NodeJoin { provider, .. } => format!("join:{provider}"),
    }
}

fn resource_cause(kind: &RmEventKind) -> String {
    match kind {
        RmEventKind::NodeJoined { provider } => format!("node-joined:{}", provider.id),
        RmEventKind::LinkChanged { change } => format!("link-changed:{}", describe_change(change)),
        _ => unreachable!("only resource events re-trigger planning"),
    }
}
