//! Hybrid cloud/on-vehicle A/B experimentation.
//!
//! Vehicles run parameterized functions with a shipped local parameter set.
//! At key-on they present their VIN to the experiment cloud, which either
//! stays silent (the vehicle keeps its local parameters) or answers with a
//! status indicator that places the vehicle in a control or treatment group.
//! Telemetry is buffered on board, uploaded in intervals, stored centrally and
//! analysed per vehicle.
//!
//! Modules:
//! - [`model`]: shared domain types and the experiment lifecycle.
//! - [`assignment`]: salted, epoch-aware VIN bucketing.
//! - [`service`]: the experiment cloud (handshakes, steering, ingestion) and its HTTP API.
//! - [`agent`]: the on-vehicle state machine.
//! - [`store`]: validated, deduplicated telemetry storage with CSV export.
//! - [`analysis`]: per-vehicle aggregation, Welch tests and sample-ratio checks.
//! - [`sim`]: deterministic discrete-event fleet simulation.
//! - [`client`]: blocking HTTP client for the service API.

pub mod agent;
pub mod analysis;
pub mod assignment;
pub mod client;
pub mod model;
pub mod service;
pub mod sim;
pub mod store;

pub use model::{Name, Timestamp};
