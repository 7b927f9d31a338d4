//! Seeded generators for random providers, meshes and templates. Used by the
//! property tests and the acceptance suite.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::mesh::{Link, MeshTopology};
use crate::model::{AsreTemplate, EdgeProvider, PayloadType, QoRSpec, ResourceProfile, SensorKind, ServiceCategory, ServiceSpec};
use crate::placement::PlacementProblem;

#[derive(Debug, Clone, Copy)]
pub struct ProblemShape {
    pub max_providers: usize,
    pub max_services: usize,
    /// Upper bound on instances after replicas and redundancy.
    pub max_instances: usize,
}

impl Default for ProblemShape {
    fn default() -> Self {
        ProblemShape { max_providers: 5, max_services: 5, max_instances: 6 }
    }
}

const SENSORS: [SensorKind; 2] = [SensorKind::Camera, SensorKind::Thermal];
const BANDWIDTHS: [f64; 4] = [1_000.0, 5_000.0, 10_000.0, 50_000.0];

pub fn random_providers<R: Rng>(rng: &mut R, count: usize) -> Vec<EdgeProvider> {
    (0..count)
        .map(|i| {
            let speed = *[0.5, 1.0, 2.0].choose(rng).expect("non-empty");
            let mut profile = ResourceProfile::new(rng.random_range(1..=3), speed);
            if rng.random_bool(0.3) {
                profile = profile.with_accel(1, speed * *[2.0, 4.0].choose(rng).expect("non-empty"));
            }
            for s in SENSORS {
                if rng.random_bool(0.45) {
                    profile = profile.with_sensor(s);
                }
            }
            EdgeProvider::new(format!("p{i}"), profile)
        })
        .collect()
}

/// Each pair is linked with probability `density`; integer latencies keep
/// path sums exact.
pub fn random_links<R: Rng>(rng: &mut R, ids: &[String], density: f64) -> Vec<Link> {
    let mut links = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            if rng.random_bool(density) {
                let latency = rng.random_range(0..=10) as f64;
                let bandwidth = *BANDWIDTHS.choose(rng).expect("non-empty");
                links.push(Link::new(a.clone(), b.clone(), latency, bandwidth));
            }
        }
    }
    links
}

pub fn random_topology<R: Rng>(rng: &mut R, nodes: usize, density: f64) -> MeshTopology {
    let ids: Vec<String> = (0..nodes).map(|i| format!("p{i}")).collect();
    let links = random_links(rng, &ids, density);
    MeshTopology::new(ids, links).expect("generated topology is valid")
}

/// A valid template: sensing services first, compute services each consuming
/// a non-empty subset of earlier streams.
pub fn random_template<R: Rng>(rng: &mut R, services: usize, max_instances: usize) -> AsreTemplate {
    let services = services.max(1);
    let sensing = rng.random_range(1..=services.min(2));
    let mut specs: Vec<ServiceSpec> = Vec::new();
    let mut streams: Vec<String> = Vec::new();
    for i in 0..services {
        let name = format!("s{i}");
        let stream = format!("o{i}");
        let mut spec = if i < sensing {
            ServiceSpec::sensing(&name, *SENSORS.choose(rng).expect("non-empty")).produces(
                &stream,
                PayloadType::Image,
                rng.random_range(1..=16) as f64 * 64.0,
                2.0,
            )
        } else {
            let mut s = ServiceSpec::compute(&name, ServiceCategory::CollaborativeSensing, rng.random_range(1..=20) as f64 * 10.0);
            if rng.random_bool(0.4) {
                s = s.accelerable();
            }
            let mut consumed = false;
            for st in &streams {
                if rng.random_bool(0.5) {
                    s = s.consumes(st);
                    consumed = true;
                }
            }
            if !consumed {
                s = s.consumes(streams.choose(rng).expect("sensing streams exist").clone());
            }
            if rng.random_bool(0.15) {
                s = s.with_replicas(2);
            }
            s.produces(&stream, PayloadType::Detections, rng.random_range(1..=8) as f64 * 8.0, 2.0)
        };
        if spec.outputs.is_empty() {
            spec = spec.produces(&stream, PayloadType::Pose, 1.0, 1.0);
        }
        streams.push(stream);
        specs.push(spec);
    }

    let sensing_instances: u32 = specs.iter().filter(|s| s.is_sensing()).map(|s| s.replicas).sum();
    let mut qor = QoRSpec::new(
        *[100.0, 300.0, 1_000.0, 5_000.0].choose(rng).expect("non-empty"),
        rng.random_range(1..=sensing_instances),
        u32::from(rng.random_bool(0.2)),
    );
    let mut template = AsreTemplate::new("random", specs, qor.clone());
    while template.instances().len() > max_instances {
        if qor.redundancy > 0 {
            qor.redundancy = 0;
            template.qor = qor.clone();
        } else if let Some(s) = template.services.iter_mut().find(|s| s.replicas > 1) {
            s.replicas = 1;
        } else {
            break;
        }
    }
    template
}

pub fn random_problem<R: Rng>(rng: &mut R, shape: ProblemShape) -> PlacementProblem {
    let count = rng.random_range(1..=shape.max_providers);
    let providers = random_providers(rng, count);
    let ids: Vec<String> = providers.iter().map(|p| p.id.clone()).collect();
    let density = *[0.4, 0.7, 1.0].choose(rng).expect("non-empty");
    let links = random_links(rng, &ids, density);
    let topology = MeshTopology::new(ids, links).expect("generated topology is valid");
    let services = rng.random_range(1..=shape.max_services);
    let template = random_template(rng, services, shape.max_instances);
    PlacementProblem::new(template, providers, topology).expect("providers are in the topology")
}
