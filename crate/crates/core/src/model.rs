//! Domain vocabulary for edge providers, services and ASRE templates.
//!
//! A template document is strict JSON: unknown keys are rejected, enums are
//! closed, and the dataflow graph is synthesized from stream wiring rather
//! than declared.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Camera,
    Lidar,
    Thermal,
    Gps,
    Imu,
    Uwb,
}

impl SensorKind {
    pub const ALL: [SensorKind; 6] = [
        SensorKind::Camera,
        SensorKind::Lidar,
        SensorKind::Thermal,
        SensorKind::Gps,
        SensorKind::Imu,
        SensorKind::Uwb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Camera => "camera",
            SensorKind::Lidar => "lidar",
            SensorKind::Thermal => "thermal",
            SensorKind::Gps => "gps",
            SensorKind::Imu => "imu",
            SensorKind::Uwb => "uwb",
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Container slot class. An accelerated instance occupies a reconfigurable
/// hardware slot and runs at `accel_speed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerClass {
    Cpu,
    Accelerated,
}

impl fmt::Display for ContainerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContainerClass::Cpu => "cpu",
            ContainerClass::Accelerated => "accelerated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadType {
    Image,
    Pointcloud,
    Pose,
    Detections,
    MapFragment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceCategory {
    SpatialCoordination,
    CollaborativeSensing,
    DecisionMaking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    Sensing,
    Compute,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid resource profile: {0}")]
    InvalidProfile(String),
    #[error("capacity exceeded on {class} slots by {overflow}")]
    CapacityExceeded { class: ContainerClass, overflow: u32 },
}

/// What one provider can host. `energy_budget_j = None` means unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileDoc")]
pub struct ResourceProfile {
    pub cpu_slots: u32,
    pub accel_slots: u32,
    pub sensors: BTreeSet<SensorKind>,
    pub cpu_speed: f64,
    pub accel_speed: f64,
    pub energy_budget_j: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    cpu_slots: u32,
    #[serde(default)]
    accel_slots: u32,
    #[serde(default)]
    sensors: BTreeSet<SensorKind>,
    cpu_speed: f64,
    #[serde(default)]
    accel_speed: Option<f64>,
    #[serde(default)]
    energy_budget_j: Option<f64>,
}

impl TryFrom<ProfileDoc> for ResourceProfile {
    type Error = ModelError;

    fn try_from(doc: ProfileDoc) -> Result<Self, ModelError> {
        let profile = ResourceProfile {
            cpu_slots: doc.cpu_slots,
            accel_slots: doc.accel_slots,
            sensors: doc.sensors,
            cpu_speed: doc.cpu_speed,
            accel_speed: doc.accel_speed.unwrap_or(doc.cpu_speed),
            energy_budget_j: doc.energy_budget_j,
        };
        profile.validate()?;
        Ok(profile)
    }
}

impl ResourceProfile {
    pub fn new(cpu_slots: u32, cpu_speed: f64) -> Self {
        ResourceProfile {
            cpu_slots,
            accel_slots: 0,
            sensors: BTreeSet::new(),
            cpu_speed,
            accel_speed: cpu_speed,
            energy_budget_j: None,
        }
    }

    pub fn with_accel(mut self, slots: u32, speed: f64) -> Self {
        self.accel_slots = slots;
        self.accel_speed = speed;
        self
    }

    pub fn with_sensor(mut self, sensor: SensorKind) -> Self {
        self.sensors.insert(sensor);
        self
    }

    pub fn with_energy(mut self, joules: f64) -> Self {
        self.energy_budget_j = Some(joules);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.cpu_speed.is_finite() && self.cpu_speed > 0.0) {
            return Err(ModelError::InvalidProfile(format!(
                "cpu_speed must be positive and finite, got {}",
                self.cpu_speed
            )));
        }
        if !(self.accel_speed.is_finite() && self.accel_speed > 0.0) {
            return Err(ModelError::InvalidProfile(format!(
                "accel_speed must be positive and finite, got {}",
                self.accel_speed
            )));
        }
        if self.accel_slots > 0 && self.accel_speed < self.cpu_speed {
            return Err(ModelError::InvalidProfile(format!(
                "accel_speed {} is below cpu_speed {}",
                self.accel_speed, self.cpu_speed
            )));
        }
        if let Some(e) = self.energy_budget_j {
            if !(e.is_finite() && e > 0.0) {
                return Err(ModelError::InvalidProfile(format!(
                    "energy_budget_j must be positive and finite, got {e}"
                )));
            }
        }
        Ok(())
    }

    pub fn slots(&self, class: ContainerClass) -> u32 {
        match class {
            ContainerClass::Cpu => self.cpu_slots,
            ContainerClass::Accelerated => self.accel_slots,
        }
    }
}

/// A robot viewed as a supplier of edge resources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeProvider {
    pub id: String,
    #[serde(flatten)]
    pub profile: ResourceProfile,
    #[serde(default = "default_alive")]
    pub alive: bool,
}

fn default_alive() -> bool {
    true
}

impl EdgeProvider {
    pub fn new(id: impl Into<String>, profile: ResourceProfile) -> Self {
        EdgeProvider { id: id.into(), profile, alive: true }
    }

    pub fn has_sensor(&self, sensor: SensorKind) -> bool {
        self.profile.sensors.contains(&sensor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataStream {
    #[serde(rename = "stream")]
    pub id: String,
    #[serde(rename = "type")]
    pub payload_type: PayloadType,
    pub size_kb: f64,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub name: String,
    pub category: ServiceCategory,
    pub kind: ServiceKind,
    #[serde(rename = "sensor", default, skip_serializing_if = "Option::is_none")]
    pub required_sensor: Option<SensorKind>,
    pub work_units: f64,
    pub accelerable: bool,
    pub inputs: Vec<String>,
    pub outputs: Vec<DataStream>,
    #[serde(default = "default_replicas")]
    pub replicas: u32,
}

fn default_replicas() -> u32 {
    1
}

impl ServiceSpec {
    pub fn sensing(name: impl Into<String>, sensor: SensorKind) -> Self {
        ServiceSpec {
            name: name.into(),
            category: ServiceCategory::CollaborativeSensing,
            kind: ServiceKind::Sensing,
            required_sensor: Some(sensor),
            work_units: 0.0,
            accelerable: false,
            inputs: Vec::new(),
            outputs: Vec::new(),
            replicas: 1,
        }
    }

    pub fn compute(name: impl Into<String>, category: ServiceCategory, work_units: f64) -> Self {
        ServiceSpec {
            name: name.into(),
            category,
            kind: ServiceKind::Compute,
            required_sensor: None,
            work_units,
            accelerable: false,
            inputs: Vec::new(),
            outputs: Vec::new(),
            replicas: 1,
        }
    }

    pub fn accelerable(mut self) -> Self {
        self.accelerable = true;
        self
    }

    pub fn consumes(mut self, stream: impl Into<String>) -> Self {
        self.inputs.push(stream.into());
        self
    }

    pub fn produces(
        mut self,
        stream: impl Into<String>,
        payload_type: PayloadType,
        size_kb: f64,
        rate_hz: f64,
    ) -> Self {
        self.outputs.push(DataStream { id: stream.into(), payload_type, size_kb, rate_hz });
        self
    }

    pub fn with_replicas(mut self, replicas: u32) -> Self {
        self.replicas = replicas;
        self
    }

    pub fn is_sensing(&self) -> bool {
        self.kind == ServiceKind::Sensing
    }

    /// Sensing services are the ones QoR redundancy applies to.
    pub fn is_critical(&self) -> bool {
        self.is_sensing()
    }
}

/// Quality-of-Results requirements, treated as hard placement constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QoRSpec {
    #[serde(rename = "max_latency_ms")]
    pub max_end_to_end_latency_ms: f64,
    pub min_sensing_nodes: u32,
    pub redundancy: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_throughput_hz: Option<f64>,
}

impl QoRSpec {
    pub fn new(max_latency_ms: f64, min_sensing_nodes: u32, redundancy: u32) -> Self {
        QoRSpec {
            max_end_to_end_latency_ms: max_latency_ms,
            min_sensing_nodes,
            redundancy,
            min_throughput_hz: None,
        }
    }
}

/// Partial QoR update supplied with an instantiate request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QoROverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_sensing_nodes: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redundancy: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_throughput_hz: Option<f64>,
}

impl QoROverrides {
    pub fn is_empty(&self) -> bool {
        *self == QoROverrides::default()
    }

    pub fn apply(&self, qor: &QoRSpec) -> QoRSpec {
        let mut out = qor.clone();
        if let Some(v) = self.max_latency_ms {
            out.max_end_to_end_latency_ms = v;
        }
        if let Some(v) = self.min_sensing_nodes {
            out.min_sensing_nodes = v;
        }
        if let Some(v) = self.redundancy {
            out.redundancy = v;
        }
        if let Some(v) = self.min_throughput_hz {
            out.min_throughput_hz = Some(v);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataflowEdge {
    pub producer: String,
    pub consumer: String,
}

/// An application-specific resource ensemble template. Serializes as its
/// [`TemplateDocument`]; dataflow is re-synthesized on the way in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TemplateDocument", from = "TemplateDocument")]
pub struct AsreTemplate {
    pub id: String,
    pub services: Vec<ServiceSpec>,
    pub dataflow: Vec<DataflowEdge>,
    pub qor: QoRSpec,
}

/// One running copy of a service: `(service name, replica index)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceId {
    pub service: String,
    pub replica: u32,
}

impl InstanceId {
    pub fn new(service: impl Into<String>, replica: u32) -> Self {
        InstanceId { service: service.into(), replica }
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.service, self.replica)
    }
}

impl std::str::FromStr for InstanceId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (service, replica) =
            s.rsplit_once('#').ok_or_else(|| format!("instance id {s:?} lacks '#'"))?;
        let replica = replica.parse().map_err(|_| format!("bad replica index in {s:?}"))?;
        Ok(InstanceId::new(service, replica))
    }
}

impl Serialize for InstanceId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InstanceId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl AsreTemplate {
    /// Builds a template, synthesizing dataflow edges from stream wiring.
    pub fn new(id: impl Into<String>, services: Vec<ServiceSpec>, qor: QoRSpec) -> Self {
        let dataflow = synthesize_dataflow(&services);
        AsreTemplate { id: id.into(), services, dataflow, qor }
    }

    pub fn service(&self, name: &str) -> Option<&ServiceSpec> {
        self.services.iter().find(|s| s.name == name)
    }

    /// Replica count after QoR redundancy is applied to critical services.
    pub fn effective_replicas(&self, service: &ServiceSpec) -> u32 {
        if service.is_critical() {
            service.replicas + self.qor.redundancy
        } else {
            service.replicas
        }
    }

    /// Every service instance, sorted by `(service name, replica)`.
    pub fn instances(&self) -> Vec<InstanceId> {
        let mut out: Vec<InstanceId> = self
            .services
            .iter()
            .flat_map(|s| (0..self.effective_replicas(s)).map(move |r| InstanceId::new(&s.name, r)))
            .collect();
        out.sort();
        out
    }

    /// Map from stream id to `(producer service, stream)`.
    pub fn streams(&self) -> BTreeMap<&str, (&ServiceSpec, &DataStream)> {
        let mut map = BTreeMap::new();
        for s in &self.services {
            for out in &s.outputs {
                map.entry(out.id.as_str()).or_insert((s, out));
            }
        }
        map
    }

    /// Streams flowing from `producer` to `consumer`.
    pub fn streams_between<'a>(&'a self, producer: &str, consumer: &str) -> Vec<&'a DataStream> {
        let (Some(p), Some(c)) = (self.service(producer), self.service(consumer)) else {
            return Vec::new();
        };
        p.outputs.iter().filter(|o| c.inputs.iter().any(|i| *i == o.id)).collect()
    }

    /// Services in a deterministic topological order of the dataflow DAG
    /// (Kahn's algorithm, ready set ordered by name). Returns `None` when the
    /// graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<&ServiceSpec>> {
        let order = topo_sort(
            self.services.iter().map(|s| s.name.as_str()),
            self.dataflow.iter().map(|e| (e.producer.as_str(), e.consumer.as_str())),
        );
        if order.leftover.is_empty() {
            Some(order.sorted.iter().filter_map(|n| self.service(n)).collect())
        } else {
            None
        }
    }

    pub fn to_document(&self) -> TemplateDocument {
        TemplateDocument { id: self.id.clone(), services: self.services.clone(), qor: self.qor.clone() }
    }
}

pub(crate) struct TopoResult<'a> {
    pub sorted: Vec<&'a str>,
    pub leftover: BTreeSet<&'a str>,
}

pub(crate) fn topo_sort<'a>(
    nodes: impl Iterator<Item = &'a str>,
    edges: impl Iterator<Item = (&'a str, &'a str)>,
) -> TopoResult<'a> {
    let mut indegree: BTreeMap<&str, usize> = nodes.map(|n| (n, 0)).collect();
    let mut succ: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (a, b) in edges {
        if !indegree.contains_key(a) || !indegree.contains_key(b) {
            continue;
        }
        if succ.entry(a).or_default().insert(b) {
            *indegree.get_mut(b).unwrap() += 1;
        }
    }
    let mut ready: BTreeSet<&str> =
        indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut sorted = Vec::new();
    while let Some(n) = ready.pop_first() {
        sorted.push(n);
        for m in succ.get(n).into_iter().flatten() {
            let d = indegree.get_mut(m).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.insert(m);
            }
        }
    }
    let done: BTreeSet<&str> = sorted.iter().copied().collect();
    let leftover = indegree.keys().filter(|n| !done.contains(*n)).copied().collect();
    TopoResult { sorted, leftover }
}

/// One `(producer, consumer)` edge per pair of services wired by at least one
/// stream, in sorted order.
pub fn synthesize_dataflow(services: &[ServiceSpec]) -> Vec<DataflowEdge> {
    let mut producers: BTreeMap<&str, &str> = BTreeMap::new();
    for s in services {
        for out in &s.outputs {
            producers.entry(out.id.as_str()).or_insert(s.name.as_str());
        }
    }
    let mut edges = BTreeSet::new();
    for s in services {
        for input in &s.inputs {
            if let Some(p) = producers.get(input.as_str()) {
                edges.insert(DataflowEdge { producer: (*p).to_string(), consumer: s.name.clone() });
            }
        }
    }
    edges.into_iter().collect()
}

/// Counts the slots consumed by `assignments` (one cpu slot per plain
/// instance, one accel slot per accelerated instance) and returns what is
/// left on `provider`.
pub fn remaining_capacity(
    provider: &EdgeProvider,
    assignments: &[(&ServiceSpec, bool)],
) -> Result<ResourceProfile, ModelError> {
    let accel = assignments.iter().filter(|(_, a)| *a).count() as u32;
    let cpu = assignments.len() as u32 - accel;
    let mut out = provider.profile.clone();
    if cpu > out.cpu_slots {
        return Err(ModelError::CapacityExceeded {
            class: ContainerClass::Cpu,
            overflow: cpu - out.cpu_slots,
        });
    }
    if accel > out.accel_slots {
        return Err(ModelError::CapacityExceeded {
            class: ContainerClass::Accelerated,
            overflow: accel - out.accel_slots,
        });
    }
    out.cpu_slots -= cpu;
    out.accel_slots -= accel;
    Ok(out)
}

mod template;
pub use template::{
    parse_template, serialize_template, validate_template, TemplateDocument, TemplateError,
    TemplateViolation,
};
