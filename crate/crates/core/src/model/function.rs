use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{ModelError, ParameterDefinition, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    /// Sampled as a time series while driving.
    Dynamic,
    /// Snapshot taken at trip boundaries.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSpec {
    pub name: String,
    pub kind: ObservableKind,
    /// Seconds between samples; dynamic observables only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_period: Option<f64>,
    pub unit: String,
    /// Plausibility window `[min, max]`; values outside are stored with an
    /// `OutOfRange` flag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plausible_range: Option<[f64; 2]>,
}

impl ObservableSpec {
    pub fn dynamic(name: &str, period_s: f64, unit: &str) -> Self {
        ObservableSpec {
            name: name.into(),
            kind: ObservableKind::Dynamic,
            sampling_period: Some(period_s),
            unit: unit.into(),
            plausible_range: None,
        }
    }

    pub fn stationary(name: &str, unit: &str) -> Self {
        ObservableSpec {
            name: name.into(),
            kind: ObservableKind::Stationary,
            sampling_period: None,
            unit: unit.into(),
            plausible_range: None,
        }
    }

    pub fn with_range(mut self, min: f64, max: f64) -> Self {
        self.plausible_range = Some([min, max]);
        self
    }

    pub(crate) fn validate_definition(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| {
            Err(ModelError::InvalidDefinition(format!(
                "observable {:?}: {msg}",
                self.name
            )))
        };
        if self.name.is_empty() {
            return bad("empty name");
        }
        match (self.kind, self.sampling_period) {
            (ObservableKind::Dynamic, Some(p)) if p > 0.0 && p.is_finite() => {}
            (ObservableKind::Dynamic, _) => {
                return bad("dynamic observables need a positive sampling_period")
            }
            (ObservableKind::Stationary, None) => {}
            (ObservableKind::Stationary, Some(_)) => {
                return bad("stationary observables have no sampling_period")
            }
        }
        if let Some([lo, hi]) = self.plausible_range {
            if !(lo <= hi) {
                return bad("plausible_range min exceeds max");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionMode {
    /// One local set plus cloud overrides.
    CloudTuned,
    /// Two embedded sets shipped in the release; the cloud only flips a switch.
    TimeCritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SwitchPosition {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSets {
    #[serde(rename = "A")]
    pub a: ParameterSet,
    #[serde(rename = "B")]
    pub b: ParameterSet,
}

impl EmbeddedSets {
    pub fn get(&self, position: SwitchPosition) -> &ParameterSet {
        match position {
            SwitchPosition::A => &self.a,
            SwitchPosition::B => &self.b,
        }
    }
}

/// A parameterized on-vehicle function as shipped in a software release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub function_id: String,
    pub parameters: Vec<ParameterDefinition>,
    pub observables: Vec<ObservableSpec>,
    pub mode: FunctionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedded_sets: Option<EmbeddedSets>,
}

impl FunctionSpec {
    pub fn parameter(&self, name: &str) -> Option<&ParameterDefinition> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn observable(&self, name: &str) -> Option<&ObservableSpec> {
        self.observables.iter().find(|o| o.name == name)
    }

    /// The shipped defaults: every parameter at its `local_default`.
    pub fn local_defaults(&self) -> ParameterSet {
        ParameterSet::from_map(
            self.parameters
                .iter()
                .map(|p| (p.name.clone(), p.local_default.clone()))
                .collect::<BTreeMap<_, _>>(),
        )
    }

    /// Checks every invariant of the definition and canonicalizes embedded sets.
    pub fn validate(mut self) -> Result<Self, ModelError> {
        if self.function_id.is_empty() {
            return Err(ModelError::InvalidDefinition("empty function_id".into()));
        }
        let mut names = HashSet::new();
        for p in &self.parameters {
            p.validate_definition()?;
            if !names.insert(p.name.as_str()) {
                return Err(ModelError::InvalidDefinition(format!(
                    "duplicate parameter {:?}",
                    p.name
                )));
            }
        }
        let mut observables = HashSet::new();
        for o in &self.observables {
            o.validate_definition()?;
            if !observables.insert(o.name.as_str()) {
                return Err(ModelError::InvalidDefinition(format!(
                    "duplicate observable {:?}",
                    o.name
                )));
            }
        }
        match (self.mode, self.embedded_sets.take()) {
            (FunctionMode::CloudTuned, None) => {}
            (FunctionMode::CloudTuned, Some(_)) => {
                return Err(ModelError::InvalidDefinition(
                    "cloud_tuned functions carry no embedded sets".into(),
                ))
            }
            (FunctionMode::TimeCritical, None) => {
                return Err(ModelError::InvalidDefinition(
                    "time_critical functions need embedded sets A and B".into(),
                ))
            }
            (FunctionMode::TimeCritical, Some(sets)) => {
                // Embedded sets are complete: every parameter is pinned.
                let a = self.local_defaults().merged(&sets.a.validated(&self)?);
                let b = self.local_defaults().merged(&sets.b.validated(&self)?);
                self.embedded_sets = Some(EmbeddedSets { a, b });
            }
        }
        Ok(self)
    }
}
