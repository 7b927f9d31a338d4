//! Deterministic discrete-event simulation of a swarm running ASRE
//! ensembles, producing a canonical JSON Lines trace and derived metrics.
//!
//! Events are totally ordered by `(time_ms, seq)`. The only randomness is
//! heartbeat loss, drawn from a ChaCha8 stream seeded by the scenario, so a
//! scenario and seed always give the same trace bytes.

use thiserror::Error;

use swaas_core::mesh::MeshError;
use swaas_core::rm::RmError;

pub mod audit;
mod engine;
pub mod metrics;
pub mod scenario;
pub mod trace;

pub use audit::{audit, AuditViolation};
pub use engine::{Accepted, SimEvent, SimEventKind, Simulation};
pub use metrics::{metrics_report, Metrics};
pub use scenario::{Scenario, ScriptedEvent, SimParams, TimelineEntry};
pub use trace::{MalformedTrace, Trace, TraceLine};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("unknown instance {0:?}")]
    UnknownInstance(String),
    #[error("unknown provider {0:?}")]
    UnknownProvider(String),
    #[error("invalid QoR override: {0}")]
    InvalidOverride(String),
    #[error("event queue is empty")]
    EmptyQueue,
    #[error("cannot schedule at {at_ms} ms, clock is at {now_ms} ms")]
    TimeRegression { at_ms: u64, now_ms: u64 },
    #[error(transparent)]
    Rm(#[from] RmError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Trace(#[from] MalformedTrace),
}

impl SimError {
    /// Whether the error is the caller's fault (bad input) rather than a
    /// failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SimError::InvalidScenario(_)
                | SimError::InvalidCommand(_)
                | SimError::UnknownTemplate(_)
                | SimError::UnknownInstance(_)
                | SimError::UnknownProvider(_)
                | SimError::InvalidOverride(_)
                | SimError::TimeRegression { .. }
        )
    }
}

/// Runs a scenario to its horizon.
pub fn run(scenario: &Scenario) -> Result<(Trace, Metrics), SimError> {
    let mut sim = Simulation::new(scenario)?;
    sim.run_to_end()?;
    let trace = sim.into_trace();
    let metrics = metrics_report(&trace)?;
    Ok((trace, metrics))
}
