//! The SwaaS control surface: an HTTP service over a live simulation, a
//! blocking client, and the pieces the `swaas` CLI is built from.
//!
//! Virtual time only moves when asked (`POST /v1/clock`) or when the server
//! is started with a tick, so a recorded command sequence replays to the
//! same trace.

pub mod client;
pub mod command;
mod driver;
pub mod error;
pub mod server;
pub mod templates;

pub use client::{Client, ClientError};
pub use command::{parse_session, ApiCommand, ClockRequest, EventRequest, InstantiateRequest};
pub use driver::{ClockState, Driver, Feed, InstanceSummary, PlacementDetail, StatusDocument, TopologyDocument};
pub use error::{ApiError, ErrorBody};
pub use server::{app, router, serve, ServeError, ServerConfig, DEFAULT_LISTEN_ADDR};
pub use templates::{list_templates, load_templates, TemplateFileError, TemplateListing, TemplateSummary};
