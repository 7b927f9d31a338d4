//! Best-improvement hill climbing over relocate and swap moves.

use serde::Serialize;

use super::eval::{improves, Evaluator, Pos};
use super::{PlacementProblem, PlacementSolution, Slot};
use crate::model::InstanceId;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "move", rename_all = "snake_case")]
pub enum Move {
    Relocate { instance: InstanceId, to: Slot },
    /// Exchange providers. Each side keeps its accelerator flag only where
    /// the new provider can honor it.
    Swap { a: InstanceId, b: InstanceId },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcceptedMove {
    #[serde(flatten)]
    pub mv: Move,
    pub violation_units: u32,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct SearchTrace {
    pub solution: PlacementSolution,
    pub start_key: (u32, f64),
    pub moves: Vec<AcceptedMove>,
}

impl SearchTrace {
    pub fn iterations(&self) -> usize {
        self.moves.len()
    }
}

pub fn local_search(problem: &PlacementProblem, start: &PlacementSolution, max_iterations: usize) -> PlacementSolution {
    local_search_traced(problem, start, max_iterations).solution
}

pub fn local_search_traced(problem: &PlacementProblem, start: &PlacementSolution, max_iterations: usize) -> SearchTrace {
    let ev = Evaluator::new(problem);
    let unchanged = |key| SearchTrace { solution: start.clone(), start_key: key, moves: Vec::new() };
    let Ok(mut current) = ev.internal_from_map(&start.assignment) else {
        return unchanged((u32::MAX, f64::INFINITY));
    };
    let mut key = ev.key(&current);
    if max_iterations == 0 {
        return unchanged(key);
    }
    let start_key = key;
    let mut moves = Vec::new();

    while moves.len() < max_iterations {
        let mut best: Option<((u32, f64), Vec<Pos>, Move)> = None;
        let mut consider = |cand: Vec<Pos>, mv: &dyn Fn() -> Move| {
            let k = ev.key(&cand);
            if improves(k, key) && best.as_ref().is_none_or(|(bk, _, _)| improves(k, *bk)) {
                best = Some((k, cand, mv()));
            }
        };

        for i in 0..ev.n() {
            for &pos in &ev.options[i] {
                if pos == current[i] {
                    continue;
                }
                let mut cand = current.clone();
                cand[i] = pos;
                consider(cand, &|| Move::Relocate {
                    instance: ev.instances[i].clone(),
                    to: Slot { provider: ev.providers[pos.0].id.clone(), uses_accel: pos.1 },
                });
            }
        }
        for i in 0..ev.n() {
            for j in i + 1..ev.n() {
                let (pi, pj) = (current[i].0, current[j].0);
                if pi == pj {
                    continue;
                }
                let mut cand = current.clone();
                cand[i] = (pj, current[i].1 && ev.accel_valid(i, (pj, true)));
                cand[j] = (pi, current[j].1 && ev.accel_valid(j, (pi, true)));
                consider(cand, &|| Move::Swap { a: ev.instances[i].clone(), b: ev.instances[j].clone() });
            }
        }

        let Some((k, cand, mv)) = best else { break };
        current = cand;
        key = k;
        moves.push(AcceptedMove { mv, violation_units: k.0, total: k.1 });
    }

    if moves.is_empty() {
        return SearchTrace { solution: start.clone(), start_key, moves };
    }
    SearchTrace { solution: ev.solution(&current), start_key, moves }
}
