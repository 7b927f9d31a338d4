//! Fixed QoR degradation ladder.
//!
//! Rungs are cumulative and tried in order: redundancy to zero, then one
//! fewer sensing node at a time down to one, then a single ×1.5 latency
//! relaxation. Nothing is relaxed past the last rung.

use serde::{Deserialize, Serialize};

use super::plan;
use crate::model::QoRSpec;
use crate::placement::{PlacementProblem, PlacementSolution};

pub const LATENCY_RELAXATION: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rung", rename_all = "snake_case")]
pub enum Rung {
    DropRedundancy,
    ReduceSensingNodes { to: u32 },
    RelaxLatency,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Degradation {
    Reduced { qor: QoRSpec, rung: Rung, rationale: String, solution: PlacementSolution },
    NoDegradation,
}

/// Every rung below `qor`, in the order they are tried.
pub fn degradation_ladder(qor: &QoRSpec) -> Vec<(Rung, QoRSpec)> {
    let mut rungs = Vec::new();
    let mut q = qor.clone();
    if q.redundancy > 0 {
        q.redundancy = 0;
        rungs.push((Rung::DropRedundancy, q.clone()));
    }
    while q.min_sensing_nodes > 1 {
        q.min_sensing_nodes -= 1;
        rungs.push((Rung::ReduceSensingNodes { to: q.min_sensing_nodes }, q.clone()));
    }
    q.max_end_to_end_latency_ms *= LATENCY_RELAXATION;
    rungs.push((Rung::RelaxLatency, q));
    rungs
}

fn describe(rung: Rung, qor: &QoRSpec) -> String {
    match rung {
        Rung::DropRedundancy => "redundancy dropped to 0".to_string(),
        Rung::ReduceSensingNodes { to } => format!("min_sensing_nodes reduced to {to}"),
        Rung::RelaxLatency => format!("latency bound relaxed to {} ms", qor.max_end_to_end_latency_ms),
    }
}

/// First rung of the ladder under `qor` that admits a feasible placement for
/// `problem`'s template on `problem`'s providers.
pub fn select_degraded_mode(
    problem: &PlacementProblem,
    qor: &QoRSpec,
    best_infeasible: &PlacementSolution,
    exact_limit: f64,
) -> Degradation {
    for (rung, reduced) in degradation_ladder(qor) {
        let mut candidate = problem.clone();
        candidate.template.qor = reduced.clone();
        let Ok(solution) = plan(&candidate, exact_limit) else { continue };
        if solution.feasible {
            let blocking: Vec<String> = best_infeasible.violations.iter().map(ToString::to_string).collect();
            let rationale = format!("{}; nominal QoR unattainable: {}", describe(rung, &reduced), blocking.join("; "));
            return Degradation::Reduced { qor: reduced, rung, rationale, solution };
        }
    }
    Degradation::NoDegradation
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_ladder_order() {
        let rungs: Vec<Rung> = degradation_ladder(&QoRSpec::new(500.0, 3, 1)).into_iter().map(|(r, _)| r).collect();
        assert_eq!(
            rungs,
            [
                Rung::DropRedundancy,
                Rung::ReduceSensingNodes { to: 2 },
                Rung::ReduceSensingNodes { to: 1 },
                Rung::RelaxLatency
            ]
        );
    }

    #[test]
    fn rungs_are_cumulative() {
        let ladder = degradation_ladder(&QoRSpec::new(500.0, 2, 2));
        let last = &ladder.last().unwrap().1;
        assert_eq!(last.redundancy, 0);
        assert_eq!(last.min_sensing_nodes, 1);
        assert_eq!(last.max_end_to_end_latency_ms, 750.0);
    }

    #[test]
    fn nothing_to_drop_leaves_latency_only() {
        let ladder = degradation_ladder(&QoRSpec::new(100.0, 1, 0));
        assert_eq!(ladder.len(), 1);
        assert_eq!(ladder[0].0, Rung::RelaxLatency);
    }
}
