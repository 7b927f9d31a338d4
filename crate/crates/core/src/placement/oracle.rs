//! Exhaustive search over every complete assignment. Ground truth for tests
//! and small problems.

use super::eval::{strictly_less, Evaluator, Pos};
use super::{PlacementError, PlacementProblem, PlacementSolution};

/// Upper bound on enumerated assignments.
pub const SEARCH_SPACE_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleOutcome {
    Optimal(PlacementSolution),
    Infeasible,
}

impl OracleOutcome {
    pub fn solution(&self) -> Option<&PlacementSolution> {
        match self {
            OracleOutcome::Optimal(s) => Some(s),
            OracleOutcome::Infeasible => None,
        }
    }
}

struct Search<'e, 'p> {
    ev: &'e Evaluator<'p>,
    current: Vec<Pos>,
    cpu: Vec<u32>,
    accel: Vec<u32>,
    best: Option<(f64, Vec<Pos>)>,
}

impl Search<'_, '_> {
    // Capacity, sensor and replica anti-affinity only get worse as more
    // instances are placed, so violating branches are cut early.
    fn admissible(&self, i: usize, pos: Pos) -> bool {
        let ev = self.ev;
        let prof = &ev.providers[pos.0].profile;
        if pos.1 && self.accel[pos.0] >= prof.accel_slots {
            return false;
        }
        if !pos.1 && self.cpu[pos.0] >= prof.cpu_slots {
            return false;
        }
        if let Some(s) = ev.services[i].required_sensor {
            if !ev.providers[pos.0].has_sensor(s) {
                return false;
            }
        }
        let name = &ev.instances[i].service;
        !(0..i).any(|j| self.current[j].0 == pos.0 && ev.instances[j].service == *name)
    }

    fn descend(&mut self, i: usize) {
        let ev = self.ev;
        if i == ev.n() {
            if !ev.violations(&self.current).is_empty() {
                return;
            }
            let total = ev.cost_lossy(&self.current).total;
            if self.best.as_ref().is_none_or(|(b, _)| strictly_less(total, *b)) {
                self.best = Some((total, self.current.clone()));
            }
            return;
        }
        for &pos in &ev.options[i] {
            if !self.admissible(i, pos) {
                continue;
            }
            self.current.push(pos);
            if pos.1 {
                self.accel[pos.0] += 1;
            } else {
                self.cpu[pos.0] += 1;
            }
            self.descend(i + 1);
            if pos.1 {
                self.accel[pos.0] -= 1;
            } else {
                self.cpu[pos.0] -= 1;
            }
            self.current.pop();
        }
    }
}

/// Minimum-total feasible assignment; ties go to the lexicographically first
/// assignment in (instance, provider id, cpu before accelerated) order.
pub fn exhaustive_oracle(problem: &PlacementProblem) -> Result<OracleOutcome, PlacementError> {
    let ev = Evaluator::new(problem);
    let space: f64 = ev.options.iter().map(|o| o.len() as f64).product();
    if space > SEARCH_SPACE_LIMIT {
        return Err(PlacementError::SearchSpaceTooLarge(space));
    }
    let np = ev.providers.len();
    let mut search = Search { ev: &ev, current: Vec::with_capacity(ev.n()), cpu: vec![0; np], accel: vec![0; np], best: None };
    search.descend(0);
    Ok(match search.best {
        Some((_, internal)) => OracleOutcome::Optimal(ev.solution(&internal)),
        None => OracleOutcome::Infeasible,
    })
}
