//! The canonical four-drone mapping problem shipped under `fixtures/f1/`.

use serde::Deserialize;

use crate::mesh::{Link, MeshTopology};
use crate::model::{parse_template, AsreTemplate, EdgeProvider};
use crate::placement::{Assignment, PlacementProblem};

pub const F1_TEMPLATE_JSON: &str = include_str!("../../../fixtures/f1/t-map.json");
pub const F1_SCENARIO_JSON: &str = include_str!("../../../fixtures/f1/scenario.json");
pub const F1_ORACLE_JSON: &str = include_str!("../../../fixtures/f1/oracle.json");

#[derive(Deserialize)]
struct World {
    providers: Vec<EdgeProvider>,
    links: Vec<Link>,
}

fn world() -> World {
    serde_json::from_str(F1_SCENARIO_JSON).expect("F1 scenario parses")
}

pub fn t_map() -> AsreTemplate {
    parse_template(F1_TEMPLATE_JSON).expect("T-MAP is valid")
}

pub fn f1_providers() -> Vec<EdgeProvider> {
    world().providers
}

pub fn f1_links() -> Vec<Link> {
    world().links
}

pub fn f1_topology() -> MeshTopology {
    let w = world();
    MeshTopology::new(w.providers.iter().map(|p| p.id.clone()), w.links).expect("F1 topology is valid")
}

pub fn f1_problem() -> PlacementProblem {
    PlacementProblem::new(t_map(), f1_providers(), f1_topology()).expect("F1 problem is valid")
}

/// One committed oracle expectation.
#[derive(Debug, Clone, Deserialize)]
pub struct Golden {
    pub assignment: Assignment,
    pub comm_ms: f64,
    pub exec_ms: f64,
    pub total: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct F1Oracle {
    pub nominal: Golden,
    pub without_d4: Golden,
}

pub fn f1_oracle() -> F1Oracle {
    serde_json::from_str(F1_ORACLE_JSON).expect("F1 oracle golden parses")
}
