//! Whole-trace safety scan: capacity conservation, no Active instance on a
//! provider the resource manager has declared dead, and causal references
//! that point backwards in time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde_json::Value;

use swaas_core::model::{ContainerClass, ResourceProfile};

use crate::trace::{Trace, TraceLine};

#[derive(Debug, Clone, PartialEq)]
pub enum AuditViolation {
    OverCommitted { seq: u64, provider: String, class: ContainerClass, used: u32, capacity: u32 },
    ActiveOnDeadProvider { t: u64, instance: String, provider: String },
    Causality { seq: u64, cause_seq: u64 },
    Unreadable { seq: u64, reason: String },
}

impl fmt::Display for AuditViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuditViolation::OverCommitted { seq, provider, class, used, capacity } => {
                write!(f, "line {seq}: {provider} holds {used} {class:?} containers, capacity {capacity}")
            }
            AuditViolation::ActiveOnDeadProvider { t, instance, provider } => {
                write!(f, "t={t}: {instance} is Active with a container on dead provider {provider}")
            }
            AuditViolation::Causality { seq, cause_seq } => {
                write!(f, "line {seq} cites line {cause_seq}, which is not earlier")
            }
            AuditViolation::Unreadable { seq, reason } => write!(f, "line {seq}: {reason}"),
        }
    }
}

#[derive(Default)]
struct Scan<'a> {
    capacity: BTreeMap<String, ResourceProfile>,
    used: BTreeMap<(String, ContainerClass), u32>,
    /// (instance, service replica) → provider, per running container.
    running: BTreeMap<String, BTreeMap<String, String>>,
    states: BTreeMap<String, String>,
    dead: BTreeSet<String>,
    lines: BTreeMap<u64, &'a TraceLine>,
    out: Vec<AuditViolation>,
}

fn class_of(payload: &Value) -> ContainerClass {
    if payload.get("uses_accel").and_then(Value::as_bool).unwrap_or(false) {
        ContainerClass::Accelerated
    } else {
        ContainerClass::Cpu
    }
}

impl<'a> Scan<'a> {
    fn check_cause(&mut self, line: &TraceLine) {
        let Some(cause) = line.payload.get("cause_seq").and_then(Value::as_u64) else { return };
        match self.lines.get(&cause) {
            Some(c) if c.seq < line.seq && c.t <= line.t => {}
            _ => self.out.push(AuditViolation::Causality { seq: line.seq, cause_seq: cause }),
        }
    }

    fn container(&mut self, line: &'a TraceLine, start: bool) {
        let p = &line.payload;
        let (Some(ensemble), Some(instance), Some(provider)) = (
            p.get("ensemble").and_then(Value::as_str),
            p.get("instance").and_then(Value::as_str),
            p.get("provider").and_then(Value::as_str),
        ) else {
            self.out.push(AuditViolation::Unreadable { seq: line.seq, reason: "container action lacks fields".into() });
            return;
        };
        let class = class_of(p);
        let key = (provider.to_string(), class);
        let held = self.running.entry(ensemble.to_string()).or_default();
        if start {
            held.insert(instance.to_string(), provider.to_string());
            let used = self.used.entry(key).or_default();
            *used += 1;
            let used = *used;
            let capacity = self.capacity.get(provider).map_or(0, |c| c.slots(class));
            if used > capacity {
                self.out.push(AuditViolation::OverCommitted {
                    seq: line.seq,
                    provider: provider.to_string(),
                    class,
                    used,
                    capacity,
                });
            }
        } else {
            held.remove(instance);
            let used = self.used.entry(key).or_default();
            *used = used.saturating_sub(1);
        }
    }

    fn check_instant(&mut self, t: u64) {
        for (instance, state) in &self.states {
            if state != "Active" {
                continue;
            }
            let Some(held) = self.running.get(instance) else { continue };
            let dead: BTreeSet<&String> = held.values().filter(|p| self.dead.contains(*p)).collect();
            for provider in dead {
                self.out.push(AuditViolation::ActiveOnDeadProvider {
                    t,
                    instance: instance.clone(),
                    provider: provider.clone(),
                });
            }
        }
    }
}

/// Scans `trace` given the initial provider profiles. Providers that join
/// later contribute the profile carried by their scripted join line.
pub fn audit(initial: &BTreeMap<String, ResourceProfile>, trace: &Trace) -> Vec<AuditViolation> {
    let mut scan = Scan { capacity: initial.clone(), ..Scan::default() };
    let mut current_t = None;
    for line in &trace.lines {
        if current_t.is_some_and(|t| t != line.t) {
            scan.check_instant(current_t.expect("checked"));
        }
        current_t = Some(line.t);
        scan.lines.insert(line.seq, line);
        scan.check_cause(line);
        let p = &line.payload;
        match line.kind.as_str() {
            "scripted" if p.get("kind").and_then(Value::as_str) == Some("node-join") => {
                let id = p.get("provider").and_then(Value::as_str).unwrap_or_default().to_string();
                if let Some(profile) = p.get("profile").and_then(|v| serde_json::from_value(v.clone()).ok()) {
                    scan.capacity.entry(id).or_insert(profile);
                }
            }
            "failure-detected" => {
                scan.dead.insert(p.get("provider").and_then(Value::as_str).unwrap_or_default().to_string());
            }
            "node-joined" => {
                scan.dead.remove(p.get("provider").and_then(Value::as_str).unwrap_or_default());
            }
            "transition" => {
                if let (Some(i), Some(to)) =
                    (p.get("instance").and_then(Value::as_str), p.get("to").and_then(Value::as_str))
                {
                    scan.states.insert(i.to_string(), to.to_string());
                }
            }
            "action" => match p.get("action").and_then(Value::as_str) {
                Some("start-container") => scan.container(line, true),
                Some("stop-container") => scan.container(line, false),
                _ => {}
            },
            _ => {}
        }
    }
    if let Some(t) = current_t {
        scan.check_instant(t);
    }
    scan.out
}
