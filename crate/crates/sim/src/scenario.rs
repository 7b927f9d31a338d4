//! Scenario files: providers, links, templates, a scripted timeline and
//! simulation parameters.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use swaas_core::mesh::{Link, MeshTopology};
use swaas_core::model::{parse_template, AsreTemplate, EdgeProvider, QoROverrides, ResourceProfile};
use swaas_core::rm::{DEFAULT_EXACT_LIMIT, DEFAULT_LAMBDA, DEFAULT_MAX_REPLAN_ROUNDS};

use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    #[serde(default = "defaults::heartbeat_interval_ms")]
    pub heartbeat_interval_ms: u64,
    /// Defaults to three heartbeat intervals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::energy_per_work_unit_j")]
    pub energy_per_work_unit_j: f64,
    #[serde(default = "defaults::energy_per_kb_j")]
    pub energy_per_kb_j: f64,
    #[serde(default = "defaults::sensing_power_w")]
    pub sensing_power_w: f64,
    #[serde(default = "defaults::replan_delay_ms")]
    pub replan_delay_ms: u64,
    /// Extra settling time before a re-plan completes. Defaults to one
    /// heartbeat interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quiescence_ms: Option<u64>,
    #[serde(default = "defaults::metric_interval_ms")]
    pub metric_interval_ms: u64,
    #[serde(default)]
    pub heartbeat_loss_probability: f64,
    #[serde(default = "defaults::max_replan_rounds")]
    pub max_replan_rounds: u32,
    #[serde(default = "defaults::exact_limit")]
    pub exact_limit: f64,
}

mod defaults {
    pub fn heartbeat_interval_ms() -> u64 {
        1_000
    }
    pub fn gamma() -> f64 {
        swaas_core::placement::DEFAULT_REPLAN_GAMMA
    }
    pub fn lambda() -> f64 {
        super::DEFAULT_LAMBDA
    }
    pub fn energy_per_work_unit_j() -> f64 {
        0.01
    }
    pub fn energy_per_kb_j() -> f64 {
        0.001
    }
    pub fn sensing_power_w() -> f64 {
        0.5
    }
    pub fn replan_delay_ms() -> u64 {
        200
    }
    pub fn metric_interval_ms() -> u64 {
        1_000
    }
    pub fn max_replan_rounds() -> u32 {
        super::DEFAULT_MAX_REPLAN_ROUNDS
    }
    pub fn exact_limit() -> f64 {
        super::DEFAULT_EXACT_LIMIT
    }
}

impl Default for SimParams {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all params have defaults")
    }
}

impl SimParams {
    pub fn timeout_ms(&self) -> u64 {
        self.timeout_ms.unwrap_or(3 * self.heartbeat_interval_ms)
    }

    pub fn quiescence_ms(&self) -> u64 {
        self.quiescence_ms.unwrap_or(self.heartbeat_interval_ms)
    }

    /// Time from a re-plan request to its completion.
    pub fn replan_latency_ms(&self) -> u64 {
        self.replan_delay_ms + self.quiescence_ms()
    }

    pub fn validate(&self) -> Result<(), String> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(format!("params.{name} must be finite and non-negative, got {v}"))
            }
        };
        if self.heartbeat_interval_ms == 0 {
            return Err("params.heartbeat_interval_ms must be positive".into());
        }
        if self.metric_interval_ms == 0 {
            return Err("params.metric_interval_ms must be positive".into());
        }
        if self.timeout_ms == Some(0) {
            return Err("params.timeout_ms must be positive".into());
        }
        if self.max_replan_rounds == 0 {
            return Err("params.max_replan_rounds must be positive".into());
        }
        if !(self.gamma >= 0.0) {
            return Err(format!("params.gamma must be non-negative, got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("params.lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.heartbeat_loss_probability) {
            return Err(format!(
                "params.heartbeat_loss_probability must lie in [0, 1], got {}",
                self.heartbeat_loss_probability
            ));
        }
        nonneg("energy_per_work_unit_j", self.energy_per_work_unit_j)?;
        nonneg("energy_per_kb_j", self.energy_per_kb_j)?;
        nonneg("sensing_power_w", self.sensing_power_w)?;
        nonneg("exact_limit", self.exact_limit)
    }
}

/// A timeline entry or an injected command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScriptedEvent {
    Instantiate {
        template: String,
        /// Assigned by the simulator when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instance: Option<String>,
        #[serde(default, skip_serializing_if = "QoROverrides::is_empty")]
        qor: QoROverrides,
    },
    Teardown {
        instance: String,
    },
    /// Crashes the provider: it stops heartbeating and executing, and the
    /// resource manager learns of it only through missed heartbeats.
    NodeFail {
        provider: String,
    },
    /// Revives a known provider, or adds a new one when `profile` is given.
    NodeJoin {
        provider: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile: Option<ResourceProfile>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        links: Vec<Link>,
    },
    LinkDown {
        a: String,
        b: String,
    },
    LinkUp {
        a: String,
        b: String,
    },
    QorViolated {
        instance: String,
        violation: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub at_ms: u64,
    #[serde(flatten)]
    pub event: ScriptedEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub providers: Vec<EdgeProvider>,
    pub links: Vec<Link>,
    pub templates: Vec<AsreTemplate>,
    pub timeline: Vec<TimelineEntry>,
    pub duration_ms: u64,
    pub seed: u64,
    pub params: SimParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    providers: Vec<EdgeProvider>,
    #[serde(default)]
    links: Vec<Link>,
    #[serde(default)]
    templates: Vec<Value>,
    #[serde(default)]
    timeline: Vec<TimelineEntry>,
    duration_ms: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    params: SimParams,
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidScenario(msg.into())
}

impl Scenario {
    /// Reads a scenario file; `{"file": ...}` template references resolve
    /// relative to the scenario's directory.
    pub fn load(path: &Path) -> Result<Scenario, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Scenario::from_json(&text, Some(&base))
    }

    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Scenario, SimError> {
        let doc: ScenarioDoc = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let mut templates = Vec::new();
        for (i, raw) in doc.templates.iter().enumerate() {
            templates.push(resolve_template(i, raw, base_dir)?);
        }
        let scenario = Scenario {
            providers: doc.providers,
            links: doc.links,
            templates,
            timeline: doc.timeline,
            duration_ms: doc.duration_ms,
            seed: doc.seed,
            params: doc.params,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn topology(&self) -> Result<MeshTopology, SimError> {
        MeshTopology::new(self.providers.iter().map(|p| p.id.clone()), self.links.clone())
            .map_err(|e| invalid(e.to_string()))
    }

    pub fn template(&self, id: &str) -> Option<&AsreTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.duration_ms == 0 {
            return Err(invalid("duration_ms must be positive"));
        }
        self.params.validate().map_err(invalid)?;
        let mut providers = BTreeSet::new();
        for p in &self.providers {
            p.profile.validate().map_err(|e| invalid(format!("provider {}: {e}", p.id)))?;
            if !providers.insert(p.id.clone()) {
                return Err(invalid(format!("duplicate provider {}", p.id)));
            }
        }
        self.topology()?;
        let mut ids = BTreeSet::new();
        for t in &self.templates {
            if !ids.insert(t.id.clone()) {
                return Err(invalid(format!("duplicate template {}", t.id)));
            }
        }

        let mut links: BTreeSet<(String, String)> = self.links.iter().map(|l| ordered(&l.a, &l.b)).collect();
        let mut instances = BTreeSet::new();
        let mut last = 0;
        for (i, entry) in self.timeline.iter().enumerate() {
            let at = |msg: String| invalid(format!("timeline[{i}]: {msg}"));
            if entry.at_ms < last {
                return Err(at(format!("at_ms {} precedes the previous entry at {last}", entry.at_ms)));
            }
            if entry.at_ms > self.duration_ms {
                return Err(at(format!("at_ms {} is after duration_ms {}", entry.at_ms, self.duration_ms)));
            }
            last = entry.at_ms;
            match &entry.event {
                ScriptedEvent::Instantiate { template, instance, .. } => {
                    if self.template(template).is_none() {
                        return Err(at(format!("unknown template {template}")));
                    }
                    if let Some(id) = instance {
                        if !instances.insert(id.clone()) {
                            return Err(at(format!("duplicate instance id {id}")));
                        }
                    }
                }
                ScriptedEvent::Teardown { instance } | ScriptedEvent::QorViolated { instance, .. } => {
                    if !instances.contains(instance) {
                        return Err(at(format!("unknown instance {instance} (name it in an earlier instantiate)")));
                    }
                }
                ScriptedEvent::NodeFail { provider } => {
                    if !providers.contains(provider) {
                        return Err(at(format!("unknown provider {provider}")));
                    }
                }
                ScriptedEvent::NodeJoin { provider, profile, links: new } => {
                    match profile {
                        Some(p) => {
                            p.validate().map_err(|e| at(format!("provider {provider}: {e}")))?;
                            providers.insert(provider.clone());
                        }
                        None if !providers.contains(provider) => {
                            return Err(at(format!("new provider {provider} needs a profile")));
                        }
                        None => {}
                    }
                    for l in new {
                        if l.a != *provider && l.b != *provider {
                            return Err(at(format!("link {}-{} is not incident to {provider}", l.a, l.b)));
                        }
                        if !providers.contains(&l.a) || !providers.contains(&l.b) {
                            return Err(at(format!("link {}-{} names an unknown provider", l.a, l.b)));
                        }
                        links.insert(ordered(&l.a, &l.b));
                    }
                }
                ScriptedEvent::LinkDown { a, b } | ScriptedEvent::LinkUp { a, b } => {
                    if !links.contains(&ordered(a, b)) {
                        return Err(at(format!("unknown link {a}-{b}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Every provider profile the scenario can ever mention, including
    /// providers that join later.
    pub fn all_profiles(&self) -> BTreeMap<String, ResourceProfile> {
        let mut out: BTreeMap<String, ResourceProfile> =
            self.providers.iter().map(|p| (p.id.clone(), p.profile.clone())).collect();
        for entry in &self.timeline {
            if let ScriptedEvent::NodeJoin { provider, profile: Some(p), .. } = &entry.event {
                out.entry(provider.clone()).or_insert_with(|| p.clone());
            }
        }
        out
    }
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

fn resolve_template(index: usize, raw: &Value, base_dir: Option<&Path>) -> Result<AsreTemplate, SimError> {
    let file = raw.as_object().filter(|o| o.len() == 1).and_then(|o| o.get("file")).and_then(Value::as_str);
    let (text, origin) = match file {
        Some(f) => {
            let path: PathBuf = base_dir.map_or_else(|| PathBuf::from(f), |b| b.join(f));
            let text = std::fs::read_to_string(&path)
                .map_err(|e| invalid(format!("templates[{index}]: {}: {e}", path.display())))?;
            (text, path.display().to_string())
        }
        None => (raw.to_string(), format!("templates[{index}]")),
    };
    parse_template(&text).map_err(|e| invalid(format!("{origin}: {e}")))
}
