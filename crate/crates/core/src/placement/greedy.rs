//! Two-phase deterministic construction.
//!
//! Sensing instances go first onto distinct sensor-bearing providers, then
//! compute instances in dataflow order, each taking the option with the
//! smallest marginal cost among those adding the fewest violations.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::eval::{Evaluator, Pos};
use super::{Assignment, PlacementError, PlacementProblem, PlacementSolution};

struct Partial<'e, 'p> {
    ev: &'e Evaluator<'p>,
    slots: Vec<Option<Pos>>,
    cpu: Vec<u32>,
    accel: Vec<u32>,
    finish: Vec<Option<f64>>,
}

impl<'e, 'p> Partial<'e, 'p> {
    fn new(ev: &'e Evaluator<'p>) -> Self {
        let np = ev.providers.len();
        Partial { ev, slots: vec![None; ev.n()], cpu: vec![0; np], accel: vec![0; np], finish: vec![None; ev.n()] }
    }

    fn place(&mut self, i: usize, pos: Pos) {
        self.slots[i] = Some(pos);
        if pos.1 {
            self.accel[pos.0] += 1;
        } else {
            self.cpu[pos.0] += 1;
        }
    }

    fn unplace(&mut self, i: usize) {
        if let Some(pos) = self.slots[i].take() {
            if pos.1 {
                self.accel[pos.0] -= 1;
            } else {
                self.cpu[pos.0] -= 1;
            }
        }
        self.finish[i] = None;
    }

    fn slot_full(&self, pos: Pos) -> bool {
        let prof = &self.ev.providers[pos.0].profile;
        if pos.1 {
            self.accel[pos.0] >= prof.accel_slots
        } else {
            self.cpu[pos.0] >= prof.cpu_slots
        }
    }

    fn same_service_on(&self, i: usize, p: usize) -> u32 {
        let name = &self.ev.instances[i].service;
        self.slots
            .iter()
            .enumerate()
            .filter(|(j, s)| *j != i && s.is_some_and(|(q, _)| q == p) && self.ev.instances[*j].service == *name)
            .count() as u32
    }

    fn used(&self) -> BTreeSet<usize> {
        self.slots.iter().flatten().map(|(p, _)| *p).collect()
    }

    /// Start time of `i` on `p` given placed producers; `None` when some
    /// producer cannot reach `p`.
    fn start_on(&self, i: usize, p: usize) -> Option<f64> {
        let mut start = 0.0f64;
        for &f in &self.ev.in_flows[i] {
            let flow = &self.ev.flows[f];
            let (Some((q, _)), Some(done)) = (self.slots[flow.from], self.finish[flow.from]) else { continue };
            start = start.max(done + self.ev.transfer(q, p, flow.size_kb)?);
        }
        Some(start)
    }

    fn record_finish(&mut self, i: usize) {
        if let Some(pos) = self.slots[i] {
            let start = self.start_on(i, pos.0).unwrap_or(f64::INFINITY);
            self.finish[i] = Some(start + self.ev.exec(i, pos));
        }
    }

    fn marginal(&self, i: usize, pos: Pos) -> f64 {
        let ev = self.ev;
        let mut cost = ev.exec(i, pos);
        for &f in ev.in_flows[i].iter().chain(&ev.out_flows[i]) {
            let flow = &ev.flows[f];
            let peer = if flow.to == i { flow.from } else { flow.to };
            if let Some((q, _)) = self.slots[peer] {
                cost += ev.transfer(q, pos.0, flow.size_kb).unwrap_or(f64::INFINITY);
            }
        }
        if ev.migrated(i, pos.0) {
            cost += ev.problem.migration_weight;
        }
        cost
    }

    fn compute_units(&self, i: usize, pos: Pos) -> u32 {
        let ev = self.ev;
        let mut units = u32::from(self.slot_full(pos)) + self.same_service_on(i, pos.0);
        if self.used().iter().any(|&q| !ev.reachable(q, pos.0)) {
            units += 1;
        }
        match self.start_on(i, pos.0) {
            None => units += 1,
            Some(start) => {
                if start + ev.exec(i, pos) > ev.problem.template.qor.max_end_to_end_latency_ms {
                    units += 1;
                }
            }
        }
        units
    }
}

fn cmp_cost(a: f64, b: f64) -> Ordering {
    if super::eval::strictly_less(a, b) {
        Ordering::Less
    } else if super::eval::strictly_less(b, a) {
        Ordering::Greater
    } else {
        Ordering::Equal
    }
}

/// Instances whose placement anchors the rest of the dataflow.
pub(crate) fn pinned(ev: &Evaluator<'_>, i: usize) -> bool {
    ev.services[i].required_sensor.is_some()
}

pub(crate) fn construct(problem: &PlacementProblem, seed: &Assignment) -> Result<PlacementSolution, PlacementError> {
    if problem.providers.is_empty() {
        return Err(PlacementError::NoProviders);
    }
    let ev = Evaluator::new(problem);
    let mut st = Partial::new(&ev);
    for (i, id) in ev.instances.iter().enumerate() {
        if let Some(slot) = seed.get(id) {
            if let Some(&p) = ev.index.get(slot.provider.as_str()) {
                st.place(i, (p, slot.uses_accel));
            }
        }
    }

    let wanted: BTreeSet<_> = problem.template.services.iter().filter_map(|s| s.required_sensor).collect();
    let matching: Vec<usize> =
        ev.providers.iter().map(|p| p.profile.sensors.iter().filter(|s| wanted.contains(s)).count()).collect();

    // phase 1: sensing instances on distinct sensor-bearing providers
    for i in 0..ev.n() {
        let Some(sensor) = ev.services[i].required_sensor else { continue };
        if st.slots[i].is_some() {
            continue;
        }
        let sensing_hosts: BTreeSet<usize> = (0..ev.n())
            .filter(|&j| ev.services[j].required_sensor.is_some())
            .filter_map(|j| st.slots[j].map(|(p, _)| p))
            .collect();
        let best = (0..ev.providers.len())
            .map(|p| {
                let units = u32::from(!ev.providers[p].has_sensor(sensor))
                    + u32::from(st.slot_full((p, false)))
                    + st.same_service_on(i, p);
                (p, units, sensing_hosts.contains(&p))
            })
            .min_by(|a, b| {
                a.1.cmp(&b.1)
                    .then(a.2.cmp(&b.2))
                    .then(matching[a.0].cmp(&matching[b.0]))
                    .then(ev.reliability(b.0).total_cmp(&ev.reliability(a.0)))
                    .then(a.0.cmp(&b.0))
            })
            .map(|(p, _, _)| p)
            .expect("providers non-empty");
        st.place(i, (best, false));
    }

    // phase 2: remaining instances in topological order
    for k in 0..ev.topo.len() {
        let i = ev.topo[k];
        if st.slots[i].is_none() {
            let best = ev.options[i]
                .iter()
                .map(|&pos| (pos, st.compute_units(i, pos), st.marginal(i, pos)))
                .min_by(|a, b| {
                    a.1.cmp(&b.1)
                        .then(cmp_cost(a.2, b.2))
                        .then(b.0 .1.cmp(&a.0 .1))
                        .then(ev.reliability(b.0 .0).total_cmp(&ev.reliability(a.0 .0)))
                        .then(a.0 .0.cmp(&b.0 .0))
                })
                .map(|(pos, _, _)| pos)
                .expect("providers non-empty");
            st.place(i, best);
        }
        st.record_finish(i);
    }

    let internal: Vec<Pos> = st.slots.iter().map(|s| s.expect("every instance placed")).collect();
    Ok(ev.solution(&internal))
}

/// The subset of `previous` that remains valid on the current providers:
/// known provider, valid accelerator use, the required sensor, a free slot
/// and no replica of the same service already kept there.
pub(crate) fn retained(problem: &PlacementProblem, previous: &Assignment) -> Assignment {
    let ev = Evaluator::new(problem);
    let mut st = Partial::new(&ev);
    let mut kept = Assignment::new();
    for (i, id) in ev.instances.iter().enumerate() {
        let Some(slot) = previous.get(id) else { continue };
        let Some(&p) = ev.index.get(slot.provider.as_str()) else { continue };
        let pos = (p, slot.uses_accel);
        let sensor_ok = ev.services[i].required_sensor.is_none_or(|s| ev.providers[p].has_sensor(s));
        if ev.accel_valid(i, pos) && sensor_ok && !st.slot_full(pos) && st.same_service_on(i, p) == 0 {
            st.place(i, pos);
            kept.insert(id.clone(), slot.clone());
        }
    }
    kept
}

/// Expansion budget for [`repair`].
pub(crate) const REPAIR_BUDGET: usize = 200_000;

struct Repair<'e, 'p> {
    st: Partial<'e, 'p>,
    order: Vec<usize>,
    sensing_left: Vec<u32>,
    budget: usize,
}

impl Repair<'_, '_> {
    fn sensing_hosts(&self) -> usize {
        let ev = self.st.ev;
        (0..ev.n())
            .filter(|&j| ev.services[j].required_sensor.is_some())
            .filter_map(|j| self.st.slots[j].map(|(p, _)| p))
            .collect::<BTreeSet<_>>()
            .len()
    }

    fn admissible(&self, i: usize, pos: Pos) -> bool {
        let ev = self.st.ev;
        if self.st.slot_full(pos) || self.st.same_service_on(i, pos.0) > 0 {
            return false;
        }
        if ev.services[i].required_sensor.is_some_and(|s| !ev.providers[pos.0].has_sensor(s)) {
            return false;
        }
        if self.st.used().iter().any(|&q| !ev.reachable(q, pos.0)) {
            return false;
        }
        match self.st.start_on(i, pos.0) {
            Some(start) => start + ev.exec(i, pos) <= ev.problem.template.qor.max_end_to_end_latency_ms,
            None => false,
        }
    }

    fn descend(&mut self, k: usize) -> bool {
        let ev = self.st.ev;
        if k == self.order.len() {
            return ev.violations(&self.st.slots.iter().map(|s| s.expect("complete")).collect::<Vec<_>>()).is_empty();
        }
        if self.budget == 0 {
            return false;
        }
        self.budget -= 1;
        let need = ev.problem.template.qor.min_sensing_nodes as usize;
        if self.sensing_hosts() + (self.sensing_left[k] as usize) < need {
            return false;
        }
        let i = self.order[k];
        if self.st.slots[i].is_some() {
            self.st.record_finish(i);
            return self.descend(k + 1);
        }
        let mut options: Vec<(Pos, f64)> = ev.options[i]
            .iter()
            .filter(|&&pos| self.admissible(i, pos))
            .map(|&pos| (pos, self.st.marginal(i, pos)))
            .collect();
        options.sort_by(|a, b| {
            cmp_cost(a.1, b.1)
                .then(b.0 .1.cmp(&a.0 .1))
                .then(ev.reliability(b.0 .0).total_cmp(&ev.reliability(a.0 .0)))
                .then(a.0 .0.cmp(&b.0 .0))
        });
        for (pos, _) in options {
            self.st.place(i, pos);
            self.st.record_finish(i);
            if self.descend(k + 1) {
                return true;
            }
            self.st.unplace(i);
        }
        false
    }
}

/// Depth-first search for any feasible completion of `seed`, trying the
/// cheapest marginal option first and giving up after [`REPAIR_BUDGET`]
/// expansions.
pub(crate) fn repair(problem: &PlacementProblem, seed: &Assignment) -> Option<PlacementSolution> {
    if problem.providers.is_empty() {
        return None;
    }
    let ev = Evaluator::new(problem);
    let mut st = Partial::new(&ev);
    for (i, id) in ev.instances.iter().enumerate() {
        if let Some(slot) = seed.get(id) {
            if let Some(&p) = ev.index.get(slot.provider.as_str()) {
                st.place(i, (p, slot.uses_accel));
            }
        }
    }
    let sensing: Vec<usize> = (0..ev.n()).filter(|&i| ev.services[i].required_sensor.is_some()).collect();
    let mut order = sensing.clone();
    order.extend(ev.topo.iter().copied().filter(|i| !sensing.contains(i)));
    let sensing_left = (0..order.len())
        .map(|k| order[k..].iter().filter(|&&i| sensing.contains(&i) && st.slots[i].is_none()).count() as u32)
        .collect();
    let mut search = Repair { st, order, sensing_left, budget: REPAIR_BUDGET };
    if search.descend(0) {
        let internal: Vec<Pos> = search.st.slots.iter().map(|s| s.expect("complete")).collect();
        return Some(ev.solution(&internal));
    }
    None
}
