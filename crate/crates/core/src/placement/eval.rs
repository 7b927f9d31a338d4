use std::collections::{BTreeMap, BTreeSet};

use crate::model::{EdgeProvider, InstanceId, ServiceSpec};

use super::{
    Assignment, CostBreakdown, PlacementError, PlacementProblem, PlacementSolution, Slot, Violation,
};

pub(crate) fn exec_ms(service: &ServiceSpec, provider: &EdgeProvider, uses_accel: bool) -> f64 {
    if service.work_units == 0.0 {
        return 0.0;
    }
    let speed = if uses_accel { provider.profile.accel_speed } else { provider.profile.cpu_speed };
    service.work_units / speed
}

/// `(provider index, uses_accel)`
pub(crate) type Pos = (usize, bool);

/// One message of one stream between two instances.
#[derive(Debug, Clone)]
pub(crate) struct Flow {
    pub from: usize,
    pub to: usize,
    pub size_kb: f64,
}

/// Precomputed view of a problem, indexed by position for fast repeated
/// evaluation.
pub(crate) struct Evaluator<'p> {
    pub problem: &'p PlacementProblem,
    pub providers: Vec<&'p EdgeProvider>,
    pub index: BTreeMap<&'p str, usize>,
    /// `(latency_ms, bottleneck_kbps)` of the chosen route per provider pair.
    routes: Vec<Vec<Option<(f64, f64)>>>,
    pub instances: Vec<InstanceId>,
    pub services: Vec<&'p ServiceSpec>,
    pub flows: Vec<Flow>,
    pub in_flows: Vec<Vec<usize>>,
    pub out_flows: Vec<Vec<usize>>,
    /// Instance indices in dataflow topological order.
    pub topo: Vec<usize>,
    /// Feasible-by-kind options per instance: every provider, plus the
    /// accelerated variant where the service and provider allow it.
    pub options: Vec<Vec<Pos>>,
    /// Previous provider index per instance, if it is still alive.
    pub previous: Vec<Option<usize>>,
}

impl<'p> Evaluator<'p> {
    pub fn new(problem: &'p PlacementProblem) -> Self {
        let providers: Vec<&EdgeProvider> = problem.providers.iter().collect();
        let index: BTreeMap<&str, usize> = providers.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
        let routes = providers
            .iter()
            .map(|a| {
                providers
                    .iter()
                    .map(|b| {
                        problem
                            .topology
                            .route(&a.id, &b.id)
                            .ok()
                            .flatten()
                            .map(|r| (r.latency_ms, r.bottleneck_kbps))
                    })
                    .collect()
            })
            .collect();

        let template = &problem.template;
        let instances = template.instances();
        let services: Vec<&ServiceSpec> =
            instances.iter().map(|id| template.service(&id.service).expect("instance of known service")).collect();

        let mut by_service: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, id) in instances.iter().enumerate() {
            by_service.entry(id.service.as_str()).or_default().push(i);
        }

        let mut flows = Vec::new();
        for producer in &template.services {
            for stream in &producer.outputs {
                for consumer in template.services.iter().filter(|c| c.inputs.contains(&stream.id)) {
                    for &from in by_service.get(producer.name.as_str()).into_iter().flatten() {
                        for &to in by_service.get(consumer.name.as_str()).into_iter().flatten() {
                            flows.push(Flow { from, to, size_kb: stream.size_kb });
                        }
                    }
                }
            }
        }
        let mut in_flows = vec![Vec::new(); instances.len()];
        let mut out_flows = vec![Vec::new(); instances.len()];
        for (f, flow) in flows.iter().enumerate() {
            in_flows[flow.to].push(f);
            out_flows[flow.from].push(f);
        }

        let topo = match template.topological_order() {
            Some(order) => order
                .iter()
                .flat_map(|s| by_service.get(s.name.as_str()).cloned().unwrap_or_default())
                .collect(),
            None => (0..instances.len()).collect(),
        };

        let options = services
            .iter()
            .map(|s| {
                let mut opts = Vec::new();
                for (p, prov) in providers.iter().enumerate() {
                    opts.push((p, false));
                    if s.accelerable && prov.profile.accel_slots > 0 {
                        opts.push((p, true));
                    }
                }
                opts
            })
            .collect();

        let previous = instances
            .iter()
            .map(|id| {
                problem
                    .previous
                    .as_ref()
                    .and_then(|prev| prev.assignment.get(id))
                    .and_then(|slot| index.get(slot.provider.as_str()).copied())
            })
            .collect();

        Evaluator { problem, providers, index, routes, instances, services, flows, in_flows, out_flows, topo, options, previous }
    }

    pub fn n(&self) -> usize {
        self.instances.len()
    }

    pub fn transfer(&self, a: usize, b: usize, size_kb: f64) -> Option<f64> {
        if a == b {
            return Some(0.0);
        }
        self.routes[a][b].map(|(lat, bw)| lat + size_kb / (bw / 1000.0))
    }

    pub fn reachable(&self, a: usize, b: usize) -> bool {
        a == b || self.routes[a][b].is_some()
    }

    pub fn exec(&self, i: usize, pos: Pos) -> f64 {
        exec_ms(self.services[i], self.providers[pos.0], pos.1)
    }

    pub fn accel_valid(&self, i: usize, pos: Pos) -> bool {
        !pos.1 || (self.services[i].accelerable && self.providers[pos.0].profile.accel_slots > 0)
    }

    pub fn migrated(&self, i: usize, provider: usize) -> bool {
        self.previous[i].is_some_and(|q| q != provider)
    }

    pub fn reliability(&self, p: usize) -> f64 {
        self.problem.reliability_of(&self.providers[p].id)
    }

    pub fn internal_from_map(&self, assignment: &Assignment) -> Result<Vec<Pos>, PlacementError> {
        self.instances
            .iter()
            .map(|id| {
                let slot = assignment.get(id).ok_or_else(|| PlacementError::IncompleteAssignment(id.clone()))?;
                let p = self
                    .index
                    .get(slot.provider.as_str())
                    .ok_or_else(|| PlacementError::UnknownProvider(slot.provider.clone()))?;
                Ok((*p, slot.uses_accel))
            })
            .collect()
    }

    pub fn to_map(&self, internal: &[Pos]) -> Assignment {
        self.instances
            .iter()
            .zip(internal)
            .map(|(id, &(p, accel))| (id.clone(), Slot { provider: self.providers[p].id.clone(), uses_accel: accel }))
            .collect()
    }

    pub fn comm_ms(&self, internal: &[Pos]) -> Result<f64, PlacementError> {
        let mut comm = 0.0;
        for f in &self.flows {
            comm += self
                .transfer(internal[f.from].0, internal[f.to].0, f.size_kb)
                .ok_or_else(|| PlacementError::Unreachable(self.instances[f.to].clone()))?;
        }
        Ok(comm)
    }

    pub fn exec_ms(&self, internal: &[Pos]) -> f64 {
        internal.iter().enumerate().map(|(i, &pos)| self.exec(i, pos)).sum()
    }

    pub fn migrations(&self, internal: &[Pos]) -> u32 {
        internal.iter().enumerate().filter(|(i, pos)| self.migrated(*i, pos.0)).count() as u32
    }

    pub fn cost(&self, internal: &[Pos]) -> Result<CostBreakdown, PlacementError> {
        Ok(CostBreakdown::new(
            self.comm_ms(internal)?,
            self.exec_ms(internal),
            self.migrations(internal),
            self.problem.migration_weight,
        ))
    }

    /// Cost with unreachable transfers counted as infinite.
    pub fn cost_lossy(&self, internal: &[Pos]) -> CostBreakdown {
        let comm = self.comm_ms(internal).unwrap_or(f64::INFINITY);
        CostBreakdown::new(comm, self.exec_ms(internal), self.migrations(internal), self.problem.migration_weight)
    }

    pub fn latency(&self, internal: &[Pos]) -> Result<f64, PlacementError> {
        let mut finish = vec![0.0f64; self.n()];
        let mut worst = 0.0f64;
        for &i in &self.topo {
            let mut start = 0.0f64;
            for &f in &self.in_flows[i] {
                let flow = &self.flows[f];
                let t = self
                    .transfer(internal[flow.from].0, internal[i].0, flow.size_kb)
                    .ok_or_else(|| PlacementError::Unreachable(self.instances[i].clone()))?;
                start = start.max(finish[flow.from] + t);
            }
            finish[i] = start + self.exec(i, internal[i]);
            worst = worst.max(finish[i]);
        }
        Ok(worst)
    }

    pub fn violations(&self, internal: &[Pos]) -> Vec<Violation> {
        let slots: Vec<Option<Pos>> = internal.iter().copied().map(Some).collect();
        self.violations_partial(&slots, Vec::new())
    }

    pub fn violations_of_map(&self, assignment: &Assignment) -> Vec<Violation> {
        let mut pre = Vec::new();
        let slots: Vec<Option<Pos>> = self
            .instances
            .iter()
            .map(|id| match assignment.get(id) {
                None => {
                    pre.push(Violation::Unassigned { instance: id.clone() });
                    None
                }
                Some(slot) => match self.index.get(slot.provider.as_str()) {
                    Some(&p) => Some((p, slot.uses_accel)),
                    None => {
                        pre.push(Violation::UnknownProvider { instance: id.clone(), provider: slot.provider.clone() });
                        None
                    }
                },
            })
            .collect();
        self.violations_partial(&slots, pre)
    }

    fn violations_partial(&self, slots: &[Option<Pos>], mut out: Vec<Violation>) -> Vec<Violation> {
        let qor = &self.problem.template.qor;
        let np = self.providers.len();

        for (i, slot) in slots.iter().enumerate() {
            if let Some(pos) = *slot {
                if !self.accel_valid(i, pos) {
                    out.push(Violation::InvalidAccel {
                        instance: self.instances[i].clone(),
                        provider: self.providers[pos.0].id.clone(),
                    });
                }
            }
        }

        // (a) slot capacities
        let mut cpu = vec![0u32; np];
        let mut accel = vec![0u32; np];
        for &(p, a) in slots.iter().flatten() {
            if a {
                accel[p] += 1;
            } else {
                cpu[p] += 1;
            }
        }
        for p in 0..np {
            let prof = &self.providers[p].profile;
            if cpu[p] > prof.cpu_slots {
                out.push(Violation::Capacity {
                    provider: self.providers[p].id.clone(),
                    class: crate::model::ContainerClass::Cpu,
                    overflow: cpu[p] - prof.cpu_slots,
                });
            }
            if accel[p] > prof.accel_slots {
                out.push(Violation::Capacity {
                    provider: self.providers[p].id.clone(),
                    class: crate::model::ContainerClass::Accelerated,
                    overflow: accel[p] - prof.accel_slots,
                });
            }
        }

        // (b) sensors
        let mut sensing_hosts = BTreeSet::new();
        for (i, slot) in slots.iter().enumerate() {
            let (Some((p, _)), Some(sensor)) = (slot, self.services[i].required_sensor) else { continue };
            if self.providers[*p].has_sensor(sensor) {
                sensing_hosts.insert(*p);
            } else {
                out.push(Violation::MissingSensor {
                    instance: self.instances[i].clone(),
                    provider: self.providers[*p].id.clone(),
                    sensor,
                });
            }
        }

        // (c) mutual reachability of every provider in use
        let used: BTreeSet<usize> = slots.iter().flatten().map(|(p, _)| *p).collect();
        let used_v: Vec<usize> = used.iter().copied().collect();
        let connected = used_v
            .iter()
            .enumerate()
            .all(|(k, &a)| used_v[k + 1..].iter().all(|&b| self.reachable(a, b)));
        if !connected {
            out.push(Violation::Disconnected { providers: used_v.iter().map(|&p| self.providers[p].id.clone()).collect() });
        }

        // (d) end-to-end latency, only meaningful for a complete, connected placement
        if connected && slots.iter().all(Option::is_some) {
            let internal: Vec<Pos> = slots.iter().map(|s| s.unwrap()).collect();
            if let Ok(lat) = self.latency(&internal) {
                if lat > qor.max_end_to_end_latency_ms {
                    out.push(Violation::LatencyExceeded { latency_ms: lat, bound_ms: qor.max_end_to_end_latency_ms });
                }
            }
        }

        // (e) sensing coverage
        let have = sensing_hosts.len() as u32;
        if have < qor.min_sensing_nodes {
            out.push(Violation::InsufficientSensingNodes { have, need: qor.min_sensing_nodes });
        }

        // (f) replica anti-affinity
        let mut per_service: BTreeMap<(&str, usize), u32> = BTreeMap::new();
        for (i, slot) in slots.iter().enumerate() {
            if let Some((p, _)) = slot {
                *per_service.entry((self.instances[i].service.as_str(), *p)).or_default() += 1;
            }
        }
        for ((service, p), count) in per_service {
            if count > 1 {
                out.push(Violation::ReplicasColocated {
                    service: service.to_string(),
                    provider: self.providers[p].id.clone(),
                    count,
                });
            }
        }

        // (g) static throughput bound on stream rates
        if let Some(bound) = qor.min_throughput_hz {
            for s in &self.problem.template.services {
                for o in &s.outputs {
                    if o.rate_hz < bound {
                        out.push(Violation::ThroughputBelowBound { stream: o.id.clone(), rate_hz: o.rate_hz, bound_hz: bound });
                    }
                }
            }
        }
        out
    }

    pub fn solution(&self, internal: &[Pos]) -> PlacementSolution {
        let violations = self.violations(internal);
        PlacementSolution {
            assignment: self.to_map(internal),
            cost: self.cost_lossy(internal),
            feasible: violations.is_empty(),
            violations,
        }
    }

    pub fn solution_from_map(&self, assignment: Assignment) -> PlacementSolution {
        let violations = self.violations_of_map(&assignment);
        let cost = match self.internal_from_map(&assignment) {
            Ok(internal) => self.cost_lossy(&internal),
            Err(_) => CostBreakdown {
                comm_ms: f64::INFINITY,
                exec_ms: f64::INFINITY,
                migration_count: 0,
                total: f64::INFINITY,
            },
        };
        PlacementSolution { feasible: violations.is_empty(), violations, assignment, cost }
    }

    /// Lexicographic search key: violation units, then total cost.
    pub fn key(&self, internal: &[Pos]) -> (u32, f64) {
        let v = super::violation_units(&self.violations(internal));
        (v, self.cost_lossy(internal).total)
    }
}

/// Strict lexicographic improvement with a relative tolerance on cost.
pub(crate) fn improves(candidate: (u32, f64), current: (u32, f64)) -> bool {
    if candidate.0 != current.0 {
        return candidate.0 < current.0;
    }
    strictly_less(candidate.1, current.1)
}

pub(crate) fn strictly_less(a: f64, b: f64) -> bool {
    if b.is_infinite() {
        return a < b;
    }
    a < b - 1e-9 * b.abs().max(1.0)
}
