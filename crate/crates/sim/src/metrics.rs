//! Metrics derived purely from a trace.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::trace::{MalformedTrace, Trace, TraceLine};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Fraction of sampled Active instants at which the nominal QoR really
    /// held. 1.0 when nothing was sampled Active.
    pub qor_satisfaction: f64,
    /// One entry per (crash, affected instance) that returned to Active,
    /// measured from the crash.
    pub recovery_times_ms: Vec<u64>,
    pub messages_sent: u64,
    pub energy_consumed_j: BTreeMap<String, f64>,
    pub reconfigurations: u64,
}

fn bad(line: &TraceLine, reason: &str) -> MalformedTrace {
    MalformedTrace { line: line.seq as usize, reason: format!("{} line: {reason}", line.kind) }
}

fn field<'a>(line: &'a TraceLine, key: &str) -> Result<&'a str, MalformedTrace> {
    line.str_field(key).ok_or_else(|| bad(line, &format!("missing string field {key:?}")))
}

pub fn metrics_report(trace: &Trace) -> Result<Metrics, MalformedTrace> {
    let mut active = 0u64;
    let mut held = 0u64;
    let mut last_sample: Option<&TraceLine> = None;
    let mut reconfigurations = 0;
    for line in &trace.lines {
        match line.kind.as_str() {
            "metric-sample" => {
                let instances =
                    line.payload.get("instances").and_then(Value::as_object).ok_or_else(|| bad(line, "no instances"))?;
                for sample in instances.values() {
                    let state = sample.get("state").and_then(Value::as_str).ok_or_else(|| bad(line, "no state"))?;
                    let ok = sample.get("qor_held").and_then(Value::as_bool).ok_or_else(|| bad(line, "no qor_held"))?;
                    if state == "Active" {
                        active += 1;
                        held += u64::from(ok);
                    }
                }
                last_sample = Some(line);
            }
            "transition" if field(line, "to")? == "Reconfiguring" => reconfigurations += 1,
            _ => {}
        }
    }

    let (messages_sent, energy_consumed_j) = match last_sample {
        None => (0, BTreeMap::new()),
        Some(line) => {
            let messages = line.payload.get("messages").and_then(Value::as_f64).ok_or_else(|| bad(line, "no messages"))?;
            let energy: BTreeMap<String, f64> = line
                .payload
                .get("energy_j")
                .cloned()
                .and_then(|v| serde_json::from_value(v).ok())
                .ok_or_else(|| bad(line, "no energy_j"))?;
            ((messages + 1e-9).floor() as u64, energy)
        }
    };

    Ok(Metrics {
        qor_satisfaction: if active == 0 { 1.0 } else { held as f64 / active as f64 },
        recovery_times_ms: recovery_times(trace)?,
        messages_sent,
        energy_consumed_j,
        reconfigurations,
    })
}

/// For each crash of provider X at time t: every instance whose next
/// reconfiguration was caused by detecting X contributes (first later entry
/// to Active) − t.
fn recovery_times(trace: &Trace) -> Result<Vec<u64>, MalformedTrace> {
    let mut out = Vec::new();
    for (i, crash) in trace.lines.iter().enumerate().filter(|(_, l)| l.kind == "node-crashed") {
        let provider = field(crash, "provider")?;
        let cause = format!("node-failed:{provider}");
        let mut disrupted = BTreeSet::new();
        let mut recovered: BTreeMap<&str, u64> = BTreeMap::new();
        for line in &trace.lines[i + 1..] {
            if line.kind == "node-crashed" && line.str_field("provider") == Some(provider) {
                break;
            }
            if line.kind != "transition" {
                continue;
            }
            let instance = field(line, "instance")?;
            let to = field(line, "to")?;
            if to == "Reconfiguring" && field(line, "cause")? == cause {
                disrupted.insert(instance);
            } else if to == "Active" && disrupted.contains(instance) && !recovered.contains_key(instance) {
                recovered.insert(instance, line.t - crash.t);
            }
        }
        out.extend(recovered.values());
    }
    Ok(out)
}
