use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{topo_sort, AsreTemplate, QoRSpec, ServiceKind, ServiceSpec};

/// The persisted shape of a template: exactly `id`, `services`, `qor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateDocument {
    pub id: String,
    pub services: Vec<ServiceSpec>,
    pub qor: QoRSpec,
}

impl From<TemplateDocument> for AsreTemplate {
    fn from(doc: TemplateDocument) -> Self {
        AsreTemplate::new(doc.id, doc.services, doc.qor)
    }
}

impl From<AsreTemplate> for TemplateDocument {
    fn from(t: AsreTemplate) -> Self {
        TemplateDocument { id: t.id, services: t.services, qor: t.qor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum TemplateViolation {
    DuplicateService { service: String },
    DuplicateStream { stream: String, producers: Vec<String> },
    DanglingStream { service: String, stream: String },
    UnknownEdgeEndpoint { producer: String, consumer: String },
    Cycle { services: Vec<String> },
    ZeroReplicas { service: String },
    SensingWithInputs { service: String },
    SensingWithoutSensor { service: String },
    ComputeWithSensor { service: String },
    InvalidWorkUnits { service: String, work_units: f64 },
    NonPositiveStream { service: String, stream: String, field: &'static str },
    NonPositiveBound { field: &'static str },
    SensingNodesUnattainable { min_sensing_nodes: u32, sensing_instances: u32 },
}

impl TemplateViolation {
    /// Document path of the offending element.
    pub fn path(&self) -> String {
        use TemplateViolation::*;
        match self {
            DuplicateService { service } => format!("services[{service}]"),
            DuplicateStream { stream, .. } => format!("streams[{stream}]"),
            DanglingStream { service, stream } => format!("services[{service}].inputs[{stream}]"),
            UnknownEdgeEndpoint { producer, consumer } => format!("dataflow[{producer}->{consumer}]"),
            Cycle { services } => format!("dataflow[{}]", services.join(",")),
            ZeroReplicas { service } => format!("services[{service}].replicas"),
            SensingWithInputs { service } => format!("services[{service}].inputs"),
            SensingWithoutSensor { service } | ComputeWithSensor { service } => {
                format!("services[{service}].sensor")
            }
            InvalidWorkUnits { service, .. } => format!("services[{service}].work_units"),
            NonPositiveStream { service, stream, field } => {
                format!("services[{service}].outputs[{stream}].{field}")
            }
            NonPositiveBound { field } => format!("qor.{field}"),
            SensingNodesUnattainable { .. } => "qor.min_sensing_nodes".to_string(),
        }
    }

    /// Subject used for ordering: the service name, or a sentinel sorting
    /// after every service for template-level findings.
    fn subject(&self) -> (u8, String) {
        use TemplateViolation::*;
        match self {
            DuplicateService { service }
            | DanglingStream { service, .. }
            | ZeroReplicas { service }
            | SensingWithInputs { service }
            | SensingWithoutSensor { service }
            | ComputeWithSensor { service }
            | InvalidWorkUnits { service, .. }
            | NonPositiveStream { service, .. } => (0, service.clone()),
            DuplicateStream { producers, .. } => (0, producers.first().cloned().unwrap_or_default()),
            UnknownEdgeEndpoint { producer, .. } => (0, producer.clone()),
            Cycle { services } => (0, services.first().cloned().unwrap_or_default()),
            NonPositiveBound { .. } | SensingNodesUnattainable { .. } => (1, String::new()),
        }
    }
}

impl fmt::Display for TemplateViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TemplateViolation::*;
        let path = self.path();
        match self {
            DuplicateService { service } => write!(f, "{path}: duplicate service name {service:?}"),
            DuplicateStream { stream, producers } => {
                write!(f, "{path}: stream {stream:?} produced by {}", producers.join(", "))
            }
            DanglingStream { stream, .. } => write!(f, "{path}: stream {stream:?} has no producer"),
            UnknownEdgeEndpoint { .. } => write!(f, "{path}: edge references an unknown service"),
            Cycle { .. } => write!(f, "{path}: dataflow contains a cycle"),
            ZeroReplicas { .. } => write!(f, "{path}: replicas must be at least 1"),
            SensingWithInputs { .. } => write!(f, "{path}: sensing services take no inputs"),
            SensingWithoutSensor { .. } => write!(f, "{path}: sensing service needs a sensor"),
            ComputeWithSensor { .. } => write!(f, "{path}: compute service cannot require a sensor"),
            InvalidWorkUnits { work_units, .. } => {
                write!(f, "{path}: work_units must be finite and non-negative, got {work_units}")
            }
            NonPositiveStream { .. } => write!(f, "{path}: must be positive and finite"),
            NonPositiveBound { .. } => write!(f, "{path}: must be positive and finite"),
            SensingNodesUnattainable { min_sensing_nodes, sensing_instances } => write!(
                f,
                "{path}: {min_sensing_nodes} sensing nodes requested but only {sensing_instances} sensing instances exist"
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("semantic error at {}", display_violations(.0))]
    Semantic(Vec<TemplateViolation>),
}

fn display_violations(v: &[TemplateViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl TemplateError {
    pub fn path(&self) -> String {
        match self {
            TemplateError::Syntax { line, column, .. } => format!("{line}:{column}"),
            TemplateError::Schema { path, .. } => path.clone(),
            TemplateError::Semantic(v) => v.first().map(|v| v.path()).unwrap_or_default(),
        }
    }
}

/// Parses and fully validates a template document.
pub fn parse_template(document: &str) -> Result<AsreTemplate, TemplateError> {
    // Syntax first, so a truncated document is never reported as a schema error.
    let value: serde_json::Value = serde_json::from_str(document).map_err(|e| {
        TemplateError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
    })?;
    let doc: TemplateDocument = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        TemplateError::Schema { path, message: e.into_inner().to_string() }
    })?;
    let template = AsreTemplate::from(doc);
    let violations = validate_template(&template);
    if violations.is_empty() {
        Ok(template)
    } else {
        Err(TemplateError::Semantic(violations))
    }
}

/// Canonical JSON document for `template` (pretty-printed, stable key order).
pub fn serialize_template(template: &AsreTemplate) -> String {
    serde_json::to_string_pretty(&template.to_document()).expect("template serializes")
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Lists every invariant violation of `template`, ordered by service name
/// with template-level findings last. An empty list means valid.
pub fn validate_template(template: &AsreTemplate) -> Vec<TemplateViolation> {
    use TemplateViolation::*;
    let mut out = Vec::new();

    let mut seen = BTreeSet::new();
    for s in &template.services {
        if !seen.insert(s.name.as_str()) {
            out.push(DuplicateService { service: s.name.clone() });
        }
    }

    let mut producers: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for s in &template.services {
        for o in &s.outputs {
            producers.entry(o.id.as_str()).or_default().push(s.name.clone());
        }
    }
    for (stream, ps) in &producers {
        if ps.len() > 1 {
            let mut ps = ps.clone();
            ps.sort();
            out.push(DuplicateStream { stream: (*stream).to_string(), producers: ps });
        }
    }

    for s in &template.services {
        for input in &s.inputs {
            // consuming one's own output is a cycle, reported below
            if !producers.contains_key(input.as_str()) {
                out.push(DanglingStream { service: s.name.clone(), stream: input.clone() });
            }
        }
        if s.replicas == 0 {
            out.push(ZeroReplicas { service: s.name.clone() });
        }
        match s.kind {
            ServiceKind::Sensing => {
                if !s.inputs.is_empty() {
                    out.push(SensingWithInputs { service: s.name.clone() });
                }
                if s.required_sensor.is_none() {
                    out.push(SensingWithoutSensor { service: s.name.clone() });
                }
            }
            ServiceKind::Compute => {
                if s.required_sensor.is_some() {
                    out.push(ComputeWithSensor { service: s.name.clone() });
                }
            }
        }
        if !(s.work_units.is_finite() && s.work_units >= 0.0) {
            out.push(InvalidWorkUnits { service: s.name.clone(), work_units: s.work_units });
        }
        for o in &s.outputs {
            if !positive(o.size_kb) {
                out.push(NonPositiveStream { service: s.name.clone(), stream: o.id.clone(), field: "size_kb" });
            }
            if !positive(o.rate_hz) {
                out.push(NonPositiveStream { service: s.name.clone(), stream: o.id.clone(), field: "rate_hz" });
            }
        }
    }

    let names: BTreeSet<&str> = template.services.iter().map(|s| s.name.as_str()).collect();
    for e in &template.dataflow {
        if !names.contains(e.producer.as_str()) || !names.contains(e.consumer.as_str()) {
            out.push(UnknownEdgeEndpoint { producer: e.producer.clone(), consumer: e.consumer.clone() });
        }
    }
    let topo = topo_sort(
        names.iter().copied(),
        template.dataflow.iter().map(|e| (e.producer.as_str(), e.consumer.as_str())),
    );
    if !topo.leftover.is_empty() {
        out.push(Cycle { services: topo.leftover.iter().map(|s| s.to_string()).collect() });
    }

    let qor = &template.qor;
    if !positive(qor.max_end_to_end_latency_ms) {
        out.push(NonPositiveBound { field: "max_latency_ms" });
    }
    if let Some(t) = qor.min_throughput_hz {
        if !positive(t) {
            out.push(NonPositiveBound { field: "min_throughput_hz" });
        }
    }
    let sensing_instances: u32 =
        template.services.iter().filter(|s| s.is_sensing()).map(|s| s.replicas).sum();
    if qor.min_sensing_nodes > sensing_instances {
        out.push(SensingNodesUnattainable { min_sensing_nodes: qor.min_sensing_nodes, sensing_instances });
    }

    // stable sort keeps the discovery order between findings on one subject
    out.sort_by_key(|v| v.subject());
    out
}
