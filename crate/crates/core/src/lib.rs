//! Swarm-as-a-Service core: resource model, mesh network, placement, the
//! elastic Resource Manager.

pub mod fixtures;
pub mod mesh;
pub mod model;
pub mod placement;
pub mod random;
pub mod rm;
