use serde::{Deserialize, Serialize};

use super::{FunctionMode, FunctionSpec, ModelError, ParameterSet, SwitchPosition, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorPayload {
    CloudOverrides(ParameterSet),
    SwitchPosition(SwitchPosition),
}

/// The cloud's reply to a key-on handshake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusIndicator {
    pub experiment_id: String,
    pub epoch: u32,
    pub variant_id: String,
    pub payload: IndicatorPayload,
    pub issued_at: Timestamp,
    pub session_token: String,
    /// Suggested seconds between refresh polls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_period: Option<f64>,
}

impl StatusIndicator {
    /// Checks the payload against the function it targets. Vehicles call this
    /// before applying anything: only predeclared names and in-bound values pass.
    pub fn validate_for(&self, spec: &FunctionSpec) -> Result<(), ModelError> {
        match (&self.payload, spec.mode) {
            (IndicatorPayload::CloudOverrides(set), FunctionMode::CloudTuned) => {
                set.validated(spec).map(|_| ())
            }
            (IndicatorPayload::SwitchPosition(_), FunctionMode::TimeCritical) => Ok(()),
            _ => Err(ModelError::InvalidDefinition(
                "indicator payload does not match the function mode".into(),
            )),
        }
    }
}

/// The parameter set a function runs with.
///
/// No indicator (or a control indicator) yields the local defaults verbatim;
/// a treatment indicator layers its overrides over the defaults. Time-critical
/// functions run exactly one embedded set, `A` unless the indicator says `B`.
pub fn resolve_parameters(
    spec: &FunctionSpec,
    indicator: Option<&StatusIndicator>,
) -> ParameterSet {
    match (spec.mode, &spec.embedded_sets) {
        (FunctionMode::TimeCritical, Some(sets)) => {
            let position = match indicator.map(|i| &i.payload) {
                Some(IndicatorPayload::SwitchPosition(p)) => *p,
                _ => SwitchPosition::A,
            };
            sets.get(position).clone()
        }
        _ => {
            let defaults = spec.local_defaults();
            match indicator.map(|i| &i.payload) {
                Some(IndicatorPayload::CloudOverrides(overrides)) => defaults.merged(overrides),
                _ => defaults,
            }
        }
    }
}
