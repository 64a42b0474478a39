//! Domain types shared by every other module.

mod eligibility;
mod error;
mod experiment;
mod function;
mod indicator;
mod parameter;
mod registry;
mod telemetry;
mod vin;

use std::sync::Arc;

pub use eligibility::EligibilityPredicate;
pub use error::ModelError;
pub use experiment::{
    transition, Experiment, ExperimentState, LifecycleEvent, Variant, VariantLabel,
};
pub use function::{
    EmbeddedSets, FunctionMode, FunctionSpec, ObservableKind, ObservableSpec, SwitchPosition,
};
pub use indicator::{resolve_parameters, IndicatorPayload, StatusIndicator};
pub use parameter::{ParamValue, ParameterDefinition, ParameterKind, ParameterSet};
pub use registry::{touched_parameters, validate_experiment, Registry};
pub use telemetry::{TelemetryRecord, VariantTag};
pub use vin::Vin;

/// Shared immutable string used for identifiers that are cloned into many records.
pub type Name = Arc<str>;

/// All timestamps are UTC and serialize as ISO-8601.
pub type Timestamp = chrono::DateTime<chrono::Utc>;
