use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use swaas_core::mesh::{Link, MeshEvent, MeshTopology};
use swaas_core::model::{validate_template, AsreTemplate, ContainerClass, EdgeProvider, QoROverrides};
use swaas_core::placement::{Assignment, PlacementProblem};
use swaas_core::rm::{
    detect_failures, handle_event, update_reliability_with, Action, EnsembleInstance, EnsembleState, Observation,
    ReliabilityRecord, RmConfig, RmEvent, RmEventKind, World,
};

use crate::scenario::{Scenario, ScriptedEvent, SimParams};
use crate::trace::{Trace, TraceLine};
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SimEventKind {
    Heartbeat,
    Scripted {
        event: ScriptedEvent,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command_id: Option<String>,
    },
    ReplanComplete { instance: String },
    MetricSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time_ms: u64,
    pub seq: u64,
    pub kind: SimEventKind,
}

struct Queued(SimEvent);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.0.time_ms, self.0.seq).cmp(&(other.0.time_ms, other.0.seq))
    }
}

/// Receipt for an accepted command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub command_id: String,
    pub at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
}

/// The discrete-event engine. Ground truth (which providers are really up)
/// and the resource manager's view (what heartbeats have told it) are kept
/// apart, so failures are only acted on once detected.
pub struct Simulation {
    params: SimParams,
    duration_ms: u64,
    now: u64,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Queued>>,
    trace: Trace,
    templates: BTreeMap<String, AsreTemplate>,
    ensembles: BTreeMap<String, EnsembleInstance>,
    reserved: BTreeSet<String>,
    truth: BTreeMap<String, EdgeProvider>,
    truth_topology: MeshTopology,
    view: BTreeMap<String, EdgeProvider>,
    view_topology: MeshTopology,
    /// Links announced by a join that the resource manager has not yet seen.
    unseen_links: BTreeMap<String, Vec<Link>>,
    records: BTreeMap<String, ReliabilityRecord>,
    pending_replan: BTreeSet<String>,
    energy: BTreeMap<String, f64>,
    messages: f64,
    accounted_to: u64,
    rng: ChaCha8Rng,
    instance_counter: u64,
    command_counter: u64,
    processing_seq: u64,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Simulation, SimError> {
        scenario.validate()?;
        let topology = scenario.topology()?;
        let truth: BTreeMap<String, EdgeProvider> =
            scenario.providers.iter().map(|p| (p.id.clone(), p.clone())).collect();
        let records = truth
            .keys()
            .filter(|id| truth[*id].alive)
            .map(|id| (id.clone(), ReliabilityRecord::new(id.clone(), 0)))
            .collect();
        let mut truth_topology = topology.clone();
        for p in truth.values().filter(|p| !p.alive) {
            truth_topology = truth_topology.apply(&MeshEvent::NodeLeave { provider: p.id.clone() })?;
        }
        let mut sim = Simulation {
            params: scenario.params.clone(),
            duration_ms: scenario.duration_ms,
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            trace: Trace::default(),
            templates: scenario.templates.iter().map(|t| (t.id.clone(), t.clone())).collect(),
            ensembles: BTreeMap::new(),
            reserved: BTreeSet::new(),
            energy: truth.keys().map(|id| (id.clone(), 0.0)).collect(),
            view: truth.clone(),
            view_topology: truth_topology.clone(),
            truth,
            truth_topology,
            unseen_links: BTreeMap::new(),
            records,
            pending_replan: BTreeSet::new(),
            messages: 0.0,
            accounted_to: 0,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            instance_counter: 0,
            command_counter: 0,
            processing_seq: 0,
        };
        for entry in &scenario.timeline {
            let mut event = entry.event.clone();
            if let ScriptedEvent::Instantiate { template, instance, .. } = &mut event {
                let id = match instance.take() {
                    Some(id) => id,
                    None => sim.fresh_instance_id(template),
                };
                sim.reserved.insert(id.clone());
                *instance = Some(id);
            }
            sim.schedule(SimEventKind::Scripted { event, command_id: None }, entry.at_ms)?;
        }
        let hb = sim.params.heartbeat_interval_ms;
        if hb <= sim.duration_ms {
            sim.schedule(SimEventKind::Heartbeat, hb)?;
        }
        let first_sample = sim.params.metric_interval_ms.min(sim.duration_ms);
        sim.schedule(SimEventKind::MetricSample, first_sample)?;
        Ok(sim)
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn duration_ms(&self) -> u64 {
        self.duration_ms
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn ensembles(&self) -> &BTreeMap<String, EnsembleInstance> {
        &self.ensembles
    }

    pub fn ensemble(&self, id: &str) -> Option<&EnsembleInstance> {
        self.ensembles.get(id)
    }

    /// Instance ids accepted but not yet created by their instantiate event.
    pub fn is_reserved(&self, id: &str) -> bool {
        self.reserved.contains(id)
    }

    pub fn templates(&self) -> &BTreeMap<String, AsreTemplate> {
        &self.templates
    }

    /// Providers as they really are, not as the resource manager sees them.
    pub fn providers(&self) -> impl Iterator<Item = &EdgeProvider> {
        self.truth.values()
    }

    /// Providers as the resource manager currently sees them.
    pub fn view(&self) -> impl Iterator<Item = &EdgeProvider> {
        self.view.values()
    }

    /// The mesh as the resource manager currently sees it.
    pub fn view_topology(&self) -> &MeshTopology {
        &self.view_topology
    }

    /// The mesh as it really is.
    pub fn topology(&self) -> &MeshTopology {
        &self.truth_topology
    }

    pub fn is_pending(&self) -> bool {
        !self.queue.is_empty()
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse(q)| q.0.time_ms)
    }

    /// Makes a template available for later instantiate commands.
    pub fn add_template(&mut self, template: AsreTemplate) -> Result<(), SimError> {
        let problems = validate_template(&template);
        if !problems.is_empty() {
            let list: Vec<String> = problems.iter().map(ToString::to_string).collect();
            return Err(SimError::InvalidCommand(format!("template {}: {}", template.id, list.join("; "))));
        }
        match self.templates.get(&template.id) {
            Some(existing) if *existing != template => {
                Err(SimError::InvalidCommand(format!("a different template {} is already loaded", template.id)))
            }
            _ => {
                self.templates.insert(template.id.clone(), template);
                Ok(())
            }
        }
    }

    pub fn schedule(&mut self, kind: SimEventKind, at_ms: u64) -> Result<u64, SimError> {
        if at_ms < self.now {
            return Err(SimError::TimeRegression { at_ms, now_ms: self.now });
        }
        self.next_seq += 1;
        let seq = self.next_seq;
        self.queue.push(Reverse(Queued(SimEvent { time_ms: at_ms, seq, kind })));
        Ok(seq)
    }

    /// Pops and processes the earliest event.
    pub fn step(&mut self) -> Result<SimEvent, SimError> {
        let Reverse(Queued(event)) = self.queue.pop().ok_or(SimError::EmptyQueue)?;
        self.account(event.time_ms);
        self.now = event.time_ms;
        self.processing_seq = event.seq;
        self.deplete();
        match &event.kind {
            SimEventKind::Heartbeat => self.on_heartbeat()?,
            SimEventKind::Scripted { event: scripted, command_id } => {
                self.on_scripted(scripted.clone(), command_id.clone())?
            }
            SimEventKind::ReplanComplete { instance } => {
                self.pending_replan.remove(instance);
                let line = self.emit("replan-complete", json!({ "instance": instance }));
                self.deliver(instance, RmEventKind::ReplanDue { instance: instance.clone() }, line)?;
            }
            SimEventKind::MetricSample => self.on_sample()?,
        }
        Ok(event)
    }

    /// Processes every event at or before `t` and moves the clock to `t`.
    pub fn advance_to(&mut self, t: u64) -> Result<(), SimError> {
        if t < self.now {
            return Err(SimError::TimeRegression { at_ms: t, now_ms: self.now });
        }
        if t > self.duration_ms {
            return Err(SimError::InvalidCommand(format!("time {t} is past the horizon {}", self.duration_ms)));
        }
        while self.peek_time().is_some_and(|at| at <= t) {
            self.step()?;
        }
        self.account(t);
        self.now = t;
        Ok(())
    }

    /// Runs to the end of the scenario.
    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        self.advance_to(self.duration_ms)
    }

    /// Validates a command against the current state and queues it.
    pub fn inject(&mut self, event: ScriptedEvent, at_ms: Option<u64>) -> Result<Accepted, SimError> {
        let at_ms = at_ms.unwrap_or(self.now);
        if at_ms < self.now {
            return Err(SimError::TimeRegression { at_ms, now_ms: self.now });
        }
        if at_ms > self.duration_ms {
            return Err(SimError::InvalidCommand(format!("at_ms {at_ms} is past the horizon {}", self.duration_ms)));
        }
        let event = self.validate_command(event)?;
        let instance = match &event {
            ScriptedEvent::Instantiate { instance, .. } => instance.clone(),
            _ => None,
        };
        if let Some(id) = &instance {
            self.reserved.insert(id.clone());
        }
        self.command_counter += 1;
        let command_id = format!("c{}", self.command_counter);
        self.schedule(SimEventKind::Scripted { event, command_id: Some(command_id.clone()) }, at_ms)?;
        Ok(Accepted { command_id, at_ms, instance })
    }

    fn instance_known(&self, id: &str) -> bool {
        self.ensembles.contains_key(id) || self.reserved.contains(id)
    }

    fn provider_known(&self, id: &str) -> bool {
        self.truth.contains_key(id) || self.queued_joins().contains(id)
    }

    fn queued_joins(&self) -> BTreeSet<String> {
        self.queue
            .iter()
            .filter_map(|Reverse(q)| match &q.0.kind {
                SimEventKind::Scripted { event: ScriptedEvent::NodeJoin { provider, profile: Some(_), .. }, .. } => {
                    Some(provider.clone())
                }
                _ => None,
            })
            .collect()
    }

    fn validate_command(&mut self, event: ScriptedEvent) -> Result<ScriptedEvent, SimError> {
        match event {
            ScriptedEvent::Instantiate { template, instance, qor } => {
                let t = self.templates.get(&template).ok_or_else(|| SimError::UnknownTemplate(template.clone()))?;
                check_overrides(t, &qor)?;
                let id = match instance {
                    Some(id) if self.instance_known(&id) => {
                        return Err(SimError::InvalidCommand(format!("instance id {id} is already in use")))
                    }
                    Some(id) if id.is_empty() => return Err(SimError::InvalidCommand("empty instance id".into())),
                    Some(id) => id,
                    None => self.fresh_instance_id(&template),
                };
                Ok(ScriptedEvent::Instantiate { template, instance: Some(id), qor })
            }
            ScriptedEvent::Teardown { instance } => {
                if !self.instance_known(&instance) {
                    return Err(SimError::UnknownInstance(instance));
                }
                Ok(ScriptedEvent::Teardown { instance })
            }
            ScriptedEvent::QorViolated { instance, violation } => {
                if !self.instance_known(&instance) {
                    return Err(SimError::UnknownInstance(instance));
                }
                Ok(ScriptedEvent::QorViolated { instance, violation })
            }
            ScriptedEvent::NodeFail { provider } => {
                if !self.provider_known(&provider) {
                    return Err(SimError::UnknownProvider(provider));
                }
                Ok(ScriptedEvent::NodeFail { provider })
            }
            ScriptedEvent::NodeJoin { provider, profile, links } => {
                match &profile {
                    Some(p) => p.validate().map_err(|e| SimError::InvalidCommand(format!("provider {provider}: {e}")))?,
                    None if !self.provider_known(&provider) => {
                        return Err(SimError::InvalidCommand(format!("new provider {provider} needs a profile")))
                    }
                    None => {}
                }
                for l in &links {
                    let incident = l.a == provider || l.b == provider;
                    let other = if l.a == provider { &l.b } else { &l.a };
                    if !incident || !self.provider_known(other) {
                        return Err(SimError::InvalidCommand(format!("link {}-{} is not usable for {provider}", l.a, l.b)));
                    }
                }
                Ok(ScriptedEvent::NodeJoin { provider, profile, links })
            }
            ScriptedEvent::LinkDown { a, b } | ScriptedEvent::LinkUp { a, b }
                if self.truth_topology.link(&a, &b).is_none() =>
            {
                Err(SimError::InvalidCommand(format!("unknown link {a}-{b}")))
            }
            other => Ok(other),
        }
    }

    fn fresh_instance_id(&mut self, template: &str) -> String {
        let stem: String = template
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
            .collect();
        loop {
            self.instance_counter += 1;
            let id = format!("{stem}-{}", self.instance_counter);
            if !self.instance_known(&id) {
                return id;
            }
        }
    }

    fn emit(&mut self, kind: &str, payload: Value) -> u64 {
        let seq = self.trace.lines.len() as u64 + 1;
        self.trace.lines.push(TraceLine { t: self.now, seq, kind: kind.to_string(), payload });
        seq
    }

    fn on_heartbeat(&mut self) -> Result<(), SimError> {
        let ids: Vec<String> = self.truth.values().filter(|p| p.alive).map(|p| p.id.clone()).collect();
        let loss = self.params.heartbeat_loss_probability;
        for id in ids {
            if loss > 0.0 && self.rng.random_bool(loss) {
                continue;
            }
            let line = self.emit("heartbeat", json!({ "provider": id }));
            if self.view.get(&id).is_some_and(|p| p.alive) {
                let record = self.records.get(&id).cloned().unwrap_or_else(|| ReliabilityRecord::new(id.clone(), self.now));
                let mut record = update_reliability_with(&record, Observation::Success, self.params.lambda);
                record.last_heartbeat_ms = self.now;
                self.records.insert(id, record);
            } else {
                self.rejoin(&id, line)?;
            }
        }

        let watched: Vec<ReliabilityRecord> =
            self.records.values().filter(|r| self.view.get(&r.provider).is_some_and(|p| p.alive)).cloned().collect();
        for id in detect_failures(&watched, self.now, self.params.timeout_ms()) {
            let line = self.emit("failure-detected", json!({ "provider": id }));
            let record = update_reliability_with(&self.records[&id], Observation::Failure, self.params.lambda);
            self.records.insert(id.clone(), record);
            self.view.get_mut(&id).expect("watched providers are in view").alive = false;
            self.view_topology = self.view_topology.apply(&MeshEvent::NodeLeave { provider: id.clone() })?;
            self.deliver_all(RmEventKind::NodeFailed { provider: id }, line)?;
        }

        let next = self.now + self.params.heartbeat_interval_ms;
        if next <= self.duration_ms {
            self.schedule(SimEventKind::Heartbeat, next)?;
        }
        Ok(())
    }

    /// A heartbeat from a provider the resource manager considers absent.
    fn rejoin(&mut self, id: &str, cause: u64) -> Result<(), SimError> {
        let provider = self.truth[id].clone();
        let links = self.unseen_links.remove(id).unwrap_or_default();
        self.view_topology =
            self.view_topology.apply(&MeshEvent::NodeJoin { provider: id.to_string(), links })?;
        self.view.insert(id.to_string(), provider.clone());
        let mut record = self.records.get(id).cloned().unwrap_or_else(|| ReliabilityRecord::new(id, self.now));
        record.last_heartbeat_ms = self.now;
        self.records.insert(id.to_string(), record);
        let line = self.emit("node-joined", json!({ "provider": id, "cause_seq": cause }));
        self.deliver_all(RmEventKind::NodeJoined { provider }, line)
    }

    fn crash(&mut self, id: &str, reason: &str) -> Result<(), SimError> {
        let p = self.truth.get_mut(id).expect("crash of a known provider");
        if !p.alive {
            return Ok(());
        }
        p.alive = false;
        self.truth_topology = self.truth_topology.apply(&MeshEvent::NodeLeave { provider: id.to_string() })?;
        self.emit("node-crashed", json!({ "provider": id, "reason": reason }));
        Ok(())
    }

    fn on_scripted(&mut self, event: ScriptedEvent, command_id: Option<String>) -> Result<(), SimError> {
        let mut payload = serde_json::to_value(&event).expect("scripted event serializes");
        if let Some(c) = &command_id {
            payload["command_id"] = json!(c);
        }
        let line = self.emit("scripted", payload);
        match event {
            ScriptedEvent::Instantiate { template, instance, qor } => {
                let id = instance.expect("instance ids are assigned when scheduling");
                self.reserved.remove(&id);
                let t = self.templates[&template].clone();
                self.ensembles.insert(id.clone(), EnsembleInstance::new(id.clone(), t));
                self.deliver(&id, RmEventKind::InstantiateRequest { template, overrides: qor }, line)?;
            }
            ScriptedEvent::Teardown { instance } => {
                if self.ensembles.contains_key(&instance) {
                    self.deliver(&instance, RmEventKind::TeardownRequest { instance: instance.clone() }, line)?;
                }
            }
            ScriptedEvent::QorViolated { instance, violation } => {
                if self.ensembles.contains_key(&instance) {
                    let kind = RmEventKind::QorViolated { instance: instance.clone(), violation };
                    self.deliver(&instance, kind, line)?;
                }
            }
            ScriptedEvent::NodeFail { provider } => self.crash(&provider, "scripted")?,
            ScriptedEvent::NodeJoin { provider, profile, links } => self.on_join(provider, profile, links)?,
            ScriptedEvent::LinkDown { a, b } => self.on_link(MeshEvent::LinkDown { a, b }, line)?,
            ScriptedEvent::LinkUp { a, b } => self.on_link(MeshEvent::LinkUp { a, b }, line)?,
        }
        Ok(())
    }

    fn on_link(&mut self, change: MeshEvent, cause: u64) -> Result<(), SimError> {
        self.truth_topology = self.truth_topology.apply(&change)?;
        match self.view_topology.apply(&change) {
            Ok(t) => self.view_topology = t,
            Err(_) => self.mark_unseen_link(&change),
        }
        self.deliver_all(RmEventKind::LinkChanged { change }, cause)
    }

    fn mark_unseen_link(&mut self, change: &MeshEvent) {
        let (a, b, up) = match change {
            MeshEvent::LinkUp { a, b } => (a, b, true),
            MeshEvent::LinkDown { a, b } => (a, b, false),
            _ => return,
        };
        for links in self.unseen_links.values_mut() {
            for l in links.iter_mut().filter(|l| (l.a == *a && l.b == *b) || (l.a == *b && l.b == *a)) {
                l.up = up;
            }
        }
    }

    fn on_join(
        &mut self,
        provider: String,
        profile: Option<swaas_core::model::ResourceProfile>,
        links: Vec<Link>,
    ) -> Result<(), SimError> {
        let known = self.truth.contains_key(&provider);
        if known && self.truth[&provider].alive {
            return Ok(());
        }
        if !known {
            let profile = profile.expect("validated: new providers carry a profile");
            let mut p = EdgeProvider::new(provider.clone(), profile);
            p.alive = true;
            self.truth.insert(provider.clone(), p);
            self.energy.entry(provider.clone()).or_insert(0.0);
        } else {
            self.truth.get_mut(&provider).expect("known").alive = true;
        }
        self.truth_topology =
            self.truth_topology.apply(&MeshEvent::NodeJoin { provider: provider.clone(), links: links.clone() })?;
        self.unseen_links.entry(provider).or_default().extend(links);
        Ok(())
    }

    fn deliver_all(&mut self, kind: RmEventKind, cause: u64) -> Result<(), SimError> {
        let ids: Vec<String> = self
            .ensembles
            .iter()
            .filter(|(_, e)| e.state != EnsembleState::TornDown)
            .map(|(id, _)| id.clone())
            .collect();
        for id in ids {
            self.deliver(&id, kind.clone(), cause)?;
        }
        Ok(())
    }

    fn deliver(&mut self, id: &str, kind: RmEventKind, cause: u64) -> Result<(), SimError> {
        let event = RmEvent::new(self.now, self.processing_seq, kind);
        let mut payload = serde_json::to_value(&event.kind).expect("rm event serializes");
        payload["instance"] = json!(id);
        payload["cause_seq"] = json!(cause);
        let line = self.emit("rm-event", payload);

        let world = self.world_for(id);
        let before = &self.ensembles[id];
        let (next, actions) = handle_event(before, &world, &event)?;
        let new_transitions = next.history[before.history.len()..].to_vec();
        self.ensembles.insert(id.to_string(), next);
        for tr in new_transitions {
            self.emit(
                "transition",
                json!({ "instance": id, "from": tr.from, "to": tr.to, "cause": tr.cause, "cause_seq": line }),
            );
        }
        for action in actions {
            let mut payload = serde_json::to_value(&action).expect("action serializes");
            payload["cause_seq"] = json!(line);
            self.emit("action", payload);
            if let Action::RequestReplan { ensemble } = action {
                if self.pending_replan.insert(ensemble.clone()) {
                    let at = self.now + self.params.replan_latency_ms();
                    self.schedule(SimEventKind::ReplanComplete { instance: ensemble }, at)?;
                }
            }
        }
        Ok(())
    }

    /// The resource manager's world for one ensemble: its view of providers
    /// with capacity held by other ensembles removed.
    fn world_for(&self, id: &str) -> World {
        let mut held: BTreeMap<(&str, ContainerClass), u32> = BTreeMap::new();
        for (other, e) in &self.ensembles {
            if other == id {
                continue;
            }
            for slot in e.running.values() {
                *held.entry((slot.provider.as_str(), slot.class())).or_default() += 1;
            }
        }
        let providers = self
            .view
            .values()
            .map(|p| {
                let mut p = p.clone();
                let cpu = held.get(&(p.id.as_str(), ContainerClass::Cpu)).copied().unwrap_or(0);
                let accel = held.get(&(p.id.as_str(), ContainerClass::Accelerated)).copied().unwrap_or(0);
                p.profile.cpu_slots = p.profile.cpu_slots.saturating_sub(cpu);
                p.profile.accel_slots = p.profile.accel_slots.saturating_sub(accel);
                p
            })
            .collect();
        World {
            providers,
            topology: self.view_topology.clone(),
            reliability: self.records.iter().map(|(k, r)| (k.clone(), r.score)).collect(),
            config: RmConfig {
                gamma: self.params.gamma,
                max_replan_rounds: self.params.max_replan_rounds,
                exact_limit: self.params.exact_limit,
            },
        }
    }

    /// Charges energy and counts messages for the running containers over
    /// `(accounted_to, to]`.
    fn account(&mut self, to: u64) {
        if to <= self.accounted_to {
            return;
        }
        let dt_s = (to - self.accounted_to) as f64 / 1000.0;
        self.accounted_to = to;
        for e in self.ensembles.values() {
            let streams = e.template.streams();
            for (iid, slot) in &e.running {
                let host = slot.provider.as_str();
                if !self.truth.get(host).is_some_and(|p| p.alive) {
                    continue;
                }
                let Some(service) = e.template.service(&iid.service) else { continue };
                let mut joules = if service.is_sensing() {
                    self.params.sensing_power_w * dt_s
                } else {
                    let rate = service
                        .inputs
                        .iter()
                        .filter_map(|s| streams.get(s.as_str()).map(|(_, d)| d.rate_hz))
                        .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))))
                        .unwrap_or(1.0);
                    service.work_units * rate * dt_s * self.params.energy_per_work_unit_j
                };
                for out in &service.outputs {
                    for (cid, cslot) in &e.running {
                        let consumes = e.template.service(&cid.service).is_some_and(|c| c.inputs.contains(&out.id));
                        if !consumes || cslot.provider == host {
                            continue;
                        }
                        let reachable = self.truth_topology.route(host, &cslot.provider).ok().flatten().is_some();
                        if reachable {
                            joules += out.size_kb * out.rate_hz * dt_s * self.params.energy_per_kb_j;
                            self.messages += out.rate_hz * dt_s;
                        }
                    }
                }
                *self.energy.entry(host.to_string()).or_insert(0.0) += joules;
            }
        }
    }

    fn deplete(&mut self) {
        let empty: Vec<String> = self
            .truth
            .values()
            .filter(|p| p.alive)
            .filter(|p| p.profile.energy_budget_j.is_some_and(|b| self.energy.get(&p.id).copied().unwrap_or(0.0) >= b))
            .map(|p| p.id.clone())
            .collect();
        for id in empty {
            self.crash(&id, "energy-depleted").expect("known provider leaves the mesh");
        }
    }

    fn on_sample(&mut self) -> Result<(), SimError> {
        if !self.ensembles.is_empty() {
            let instances: BTreeMap<&str, Value> = self
                .ensembles
                .iter()
                .map(|(id, e)| (id.as_str(), json!({ "state": e.state, "qor_held": self.qor_held(e) })))
                .collect();
            let payload = json!({ "instances": instances, "energy_j": self.energy, "messages": self.messages });
            self.emit("metric-sample", payload);
        }
        if self.now < self.duration_ms {
            let next = (self.now + self.params.metric_interval_ms).min(self.duration_ms);
            self.schedule(SimEventKind::MetricSample, next)?;
        }
        Ok(())
    }

    /// Whether an Active instance really meets its nominal QoR against the
    /// ground-truth swarm, including failures not yet detected.
    fn qor_held(&self, e: &EnsembleInstance) -> bool {
        let Some(placement) = &e.placement else { return false };
        if e.state != EnsembleState::Active || e.running != placement.assignment {
            return false;
        }
        let providers: Vec<EdgeProvider> = self.truth.values().cloned().collect();
        if !placement.assignment.values().all(|s| self.truth.get(&s.provider).is_some_and(|p| p.alive)) {
            return false;
        }
        match PlacementProblem::new(e.template.clone(), providers, self.truth_topology.clone()) {
            Ok(problem) => problem.evaluate(placement.assignment.clone()).feasible,
            Err(_) => false,
        }
    }

    /// Current placement of an instance, if any.
    pub fn assignment(&self, id: &str) -> Option<&Assignment> {
        self.ensembles.get(id).and_then(|e| e.placement.as_ref()).map(|p| &p.assignment)
    }
}

fn check_overrides(template: &AsreTemplate, overrides: &QoROverrides) -> Result<(), SimError> {
    if let Some(v) = overrides.max_latency_ms {
        if !(v.is_finite() && v > 0.0) {
            return Err(SimError::InvalidOverride(format!("max_latency_ms must be positive, got {v}")));
        }
    }
    if let Some(v) = overrides.min_throughput_hz {
        if !(v.is_finite() && v > 0.0) {
            return Err(SimError::InvalidOverride(format!("min_throughput_hz must be positive, got {v}")));
        }
    }
    let mut t = template.clone();
    t.qor = overrides.apply(&t.qor);
    let problems = validate_template(&t);
    if problems.is_empty() {
        Ok(())
    } else {
        let list: Vec<String> = problems.iter().map(ToString::to_string).collect();
        Err(SimError::InvalidOverride(list.join("; ")))
    }
}

