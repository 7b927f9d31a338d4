//! Resource Manager placement: assigning service instances of a template to
//! providers.
//!
//! Objective: `total = comm_ms + exec_ms + γ·migration_count`, where `comm_ms`
//! sums one message transfer per (stream, producer instance, consumer
//! instance) and `exec_ms` sums per-instance execution latency. QoR bounds are
//! hard constraints; infeasibility is reported, never relaxed here.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::MeshTopology;
use crate::model::{AsreTemplate, ContainerClass, EdgeProvider, InstanceId, SensorKind, ServiceSpec};

mod eval;
mod greedy;
mod local_search;
mod oracle;

pub use local_search::{local_search, local_search_traced, AcceptedMove, Move, SearchTrace};
pub use oracle::{exhaustive_oracle, OracleOutcome, SEARCH_SPACE_LIMIT};

pub(crate) use eval::Evaluator;

/// Iteration cap used by [`solve`] and [`replan`].
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000;
/// Migration weight applied when re-planning a live ensemble.
pub const DEFAULT_REPLAN_GAMMA: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("no providers available")]
    NoProviders,
    #[error("unknown provider {0:?}")]
    UnknownProvider(String),
    #[error("assignment is missing instance {0}")]
    IncompleteAssignment(InstanceId),
    #[error("{0} is unreachable from its peers")]
    Unreachable(InstanceId),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("search space of {0} assignments exceeds the oracle limit")]
    SearchSpaceTooLarge(f64),
}

/// Where one instance runs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub provider: String,
    pub uses_accel: bool,
}

impl Slot {
    pub fn cpu(provider: impl Into<String>) -> Self {
        Slot { provider: provider.into(), uses_accel: false }
    }

    pub fn accel(provider: impl Into<String>) -> Self {
        Slot { provider: provider.into(), uses_accel: true }
    }

    pub fn class(&self) -> ContainerClass {
        if self.uses_accel {
            ContainerClass::Accelerated
        } else {
            ContainerClass::Cpu
        }
    }
}

pub type Assignment = BTreeMap<InstanceId, Slot>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub comm_ms: f64,
    pub exec_ms: f64,
    pub migration_count: u32,
    pub total: f64,
}

impl CostBreakdown {
    pub(crate) fn new(comm_ms: f64, exec_ms: f64, migration_count: u32, gamma: f64) -> Self {
        CostBreakdown { comm_ms, exec_ms, migration_count, total: comm_ms + exec_ms + migration_term(gamma, migration_count) }
    }
}

/// `γ·count`, with zero migrations costing nothing even for `γ = ∞`.
pub(crate) fn migration_term(gamma: f64, count: u32) -> f64 {
    if count == 0 {
        0.0
    } else {
        gamma * count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    Unassigned { instance: InstanceId },
    UnknownProvider { instance: InstanceId, provider: String },
    InvalidAccel { instance: InstanceId, provider: String },
    Capacity { provider: String, class: ContainerClass, overflow: u32 },
    MissingSensor { instance: InstanceId, provider: String, sensor: SensorKind },
    Disconnected { providers: Vec<String> },
    LatencyExceeded { latency_ms: f64, bound_ms: f64 },
    InsufficientSensingNodes { have: u32, need: u32 },
    ReplicasColocated { service: String, provider: String, count: u32 },
    ThroughputBelowBound { stream: String, rate_hz: f64, bound_hz: f64 },
}

impl Violation {
    /// How far from satisfied this violation is, in whole units. Local search
    /// minimizes the sum of these before cost.
    pub fn units(&self) -> u32 {
        match self {
            Violation::Capacity { overflow, .. } => *overflow,
            Violation::InsufficientSensingNodes { have, need } => need - have,
            Violation::ReplicasColocated { count, .. } => count - 1,
            _ => 1,
        }
    }

    pub fn is_qor(&self) -> bool {
        matches!(
            self,
            Violation::LatencyExceeded { .. }
                | Violation::InsufficientSensingNodes { .. }
                | Violation::ThroughputBelowBound { .. }
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Unassigned { instance } => write!(f, "{instance} is unassigned"),
            Violation::UnknownProvider { instance, provider } => {
                write!(f, "{instance} is on unknown or dead provider {provider}")
            }
            Violation::InvalidAccel { instance, provider } => {
                write!(f, "{instance} cannot use an accelerator on {provider}")
            }
            Violation::Capacity { provider, class, overflow } => {
                write!(f, "{provider} {class} slots over-committed by {overflow}")
            }
            Violation::MissingSensor { instance, provider, sensor } => {
                write!(f, "{instance} needs {sensor} but {provider} lacks it")
            }
            Violation::Disconnected { providers } => {
                write!(f, "providers not mutually reachable: {}", providers.join(", "))
            }
            Violation::LatencyExceeded { latency_ms, bound_ms } => {
                write!(f, "end-to-end latency {latency_ms:.3} ms exceeds {bound_ms} ms")
            }
            Violation::InsufficientSensingNodes { have, need } => {
                write!(f, "{have} distinct sensing providers, {need} required")
            }
            Violation::ReplicasColocated { service, provider, count } => {
                write!(f, "{count} replicas of {service} share {provider}")
            }
            Violation::ThroughputBelowBound { stream, rate_hz, bound_hz } => {
                write!(f, "stream {stream} runs at {rate_hz} Hz, below {bound_hz} Hz")
            }
        }
    }
}

pub fn violation_units(violations: &[Violation]) -> u32 {
    violations.iter().map(Violation::units).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementSolution {
    pub assignment: Assignment,
    pub cost: CostBreakdown,
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

impl PlacementSolution {
    /// Canonical JSON; identical problems give byte-identical output.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("solution serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn providers_used(&self) -> std::collections::BTreeSet<&str> {
        self.assignment.values().map(|s| s.provider.as_str()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PlacementProblem {
    pub template: AsreTemplate,
    /// Alive providers only; capacities already net of other ensembles.
    pub providers: Vec<EdgeProvider>,
    pub topology: MeshTopology,
    pub previous: Option<PlacementSolution>,
    pub migration_weight: f64,
    /// Provider reliability scores in `[0, 1]`; missing entries count as 1.
    pub reliability: BTreeMap<String, f64>,
}

impl PlacementProblem {
    /// Dead providers (by flag or by topology) are dropped. Every remaining
    /// provider must appear in the topology.
    pub fn new(
        template: AsreTemplate,
        providers: Vec<EdgeProvider>,
        topology: MeshTopology,
    ) -> Result<Self, PlacementError> {
        for p in &providers {
            if !topology.contains(&p.id) {
                return Err(PlacementError::UnknownProvider(p.id.clone()));
            }
        }
        let mut providers: Vec<EdgeProvider> =
            providers.into_iter().filter(|p| p.alive && topology.is_alive(&p.id)).collect();
        providers.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(PlacementProblem {
            template,
            providers,
            topology,
            previous: None,
            migration_weight: 0.0,
            reliability: BTreeMap::new(),
        })
    }

    pub fn with_previous(mut self, previous: PlacementSolution, migration_weight: f64) -> Self {
        self.previous = Some(previous);
        self.migration_weight = migration_weight;
        self
    }

    pub fn with_reliability(mut self, reliability: BTreeMap<String, f64>) -> Self {
        self.reliability = reliability;
        self
    }

    pub fn provider(&self, id: &str) -> Option<&EdgeProvider> {
        self.providers.iter().find(|p| p.id == id)
    }

    pub fn reliability_of(&self, id: &str) -> f64 {
        self.reliability.get(id).copied().unwrap_or(1.0)
    }

    /// A solution record for `assignment`, with feasibility filled in.
    pub fn evaluate(&self, assignment: Assignment) -> PlacementSolution {
        let ev = Evaluator::new(self);
        ev.solution_from_map(assignment)
    }
}

pub fn effective_exec_ms(service: &ServiceSpec, provider: &EdgeProvider, uses_accel: bool) -> Result<f64, PlacementError> {
    if uses_accel && !(service.accelerable && provider.profile.accel_slots > 0) {
        return Err(PlacementError::PreconditionViolated(format!(
            "{} cannot run accelerated on {}",
            service.name, provider.id
        )));
    }
    Ok(eval::exec_ms(service, provider, uses_accel))
}

pub fn solution_cost(problem: &PlacementProblem, assignment: &Assignment) -> Result<CostBreakdown, PlacementError> {
    let ev = Evaluator::new(problem);
    let internal = ev.internal_from_map(assignment)?;
    ev.cost(&internal)
}

/// Critical-path latency through the instance-level dataflow DAG.
pub fn end_to_end_latency(problem: &PlacementProblem, assignment: &Assignment) -> Result<f64, PlacementError> {
    let ev = Evaluator::new(problem);
    let internal = ev.internal_from_map(assignment)?;
    ev.latency(&internal)
}

pub fn check_feasibility(problem: &PlacementProblem, assignment: &Assignment) -> Vec<Violation> {
    Evaluator::new(problem).violations_of_map(assignment)
}

/// Number of complete assignments the exhaustive oracle would enumerate.
pub fn search_space_size(problem: &PlacementProblem) -> f64 {
    Evaluator::new(problem).options.iter().map(|o| o.len() as f64).product()
}

pub fn greedy_construct(problem: &PlacementProblem) -> Result<PlacementSolution, PlacementError> {
    greedy::construct(problem, &Assignment::new())
}

/// Greedy construction followed by local search.
pub fn solve(problem: &PlacementProblem) -> Result<PlacementSolution, PlacementError> {
    multi_start(problem, &Assignment::new())
}

/// Re-plan around `problem.previous`: keep every previous assignment that is
/// still valid, place the rest greedily, then improve locally with the
/// migration term active.
pub fn replan(problem: &PlacementProblem) -> Result<PlacementSolution, PlacementError> {
    let Some(previous) = &problem.previous else {
        return solve(problem);
    };
    if problem.providers.is_empty() {
        return Err(PlacementError::NoProviders);
    }
    let seed = greedy::retained(problem, &previous.assignment);
    multi_start(problem, &seed)
}

/// Alive providers grouped by mutual reachability, in id order.
fn components(problem: &PlacementProblem) -> Vec<Vec<EdgeProvider>> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for p in &problem.providers {
        if seen.contains(&p.id) {
            continue;
        }
        let reach = problem.topology.reachable_from(&p.id).unwrap_or_default();
        let group: Vec<EdgeProvider> =
            problem.providers.iter().filter(|q| q.id == p.id || reach.contains(&q.id)).cloned().collect();
        seen.extend(group.iter().map(|q| q.id.clone()));
        out.push(group);
    }
    out
}

fn key(s: &PlacementSolution) -> (u32, f64) {
    (violation_units(&s.violations), s.cost.total)
}

fn keep_better(best: &mut PlacementSolution, candidate: PlacementSolution) {
    if eval::improves(key(&candidate), key(best)) {
        *best = candidate;
    }
}

/// Greedy plus local search from several deterministic starts; the best by
/// (violation units, total) wins, earlier starts on ties.
///
/// Starts, in order: the plain greedy completion of `seed`; the same per mesh
/// partition when the mesh is split (a feasible placement never spans two);
/// greedy with each unseeded pinned instance forced onto each of its
/// options; and, if everything is still infeasible, a bounded depth-first
/// repair.
fn multi_start(problem: &PlacementProblem, seed: &Assignment) -> Result<PlacementSolution, PlacementError> {
    let start = greedy::construct(problem, seed)?;
    let mut best = local_search(problem, &start, DEFAULT_MAX_ITERATIONS);

    let parts = components(problem);
    if parts.len() > 1 {
        for providers in parts {
            let ids: std::collections::BTreeSet<&str> = providers.iter().map(|p| p.id.as_str()).collect();
            let local_seed: Assignment =
                seed.iter().filter(|(_, s)| ids.contains(s.provider.as_str())).map(|(i, s)| (i.clone(), s.clone())).collect();
            let sub = PlacementProblem { providers, ..problem.clone() };
            let start = greedy::construct(&sub, &local_seed)?;
            let local = local_search(&sub, &start, DEFAULT_MAX_ITERATIONS);
            keep_better(&mut best, local_search(problem, &problem.evaluate(local.assignment), DEFAULT_MAX_ITERATIONS));
        }
    }

    let ev = Evaluator::new(problem);
    for (i, id) in ev.instances.iter().enumerate() {
        if seed.contains_key(id) || !greedy::pinned(&ev, i) {
            continue;
        }
        for &(p, accel) in &ev.options[i] {
            let mut pinned = seed.clone();
            pinned.insert(id.clone(), Slot { provider: ev.providers[p].id.clone(), uses_accel: accel });
            let start = greedy::construct(problem, &pinned)?;
            keep_better(&mut best, local_search(problem, &start, DEFAULT_MAX_ITERATIONS));
        }
    }

    if !best.feasible {
        let repaired = greedy::repair(problem, seed).or_else(|| {
            if seed.is_empty() {
                None
            } else {
                greedy::repair(problem, &Assignment::new())
            }
        });
        if let Some(start) = repaired {
            keep_better(&mut best, local_search(problem, &start, DEFAULT_MAX_ITERATIONS));
        }
    }
    Ok(best)
}
