//! Ground-truth response of a function to its parameters.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agent::FunctionModel;
use crate::model::{FunctionSpec, ModelError, ObservableSpec, ParameterSet, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMode {
    /// Adds `coefficient * (value - default)`.
    Additive,
    /// Scales by `1 + coefficient * (value - default)`.
    Multiplicative,
}

/// How one parameter moves one observable, relative to the parameter's local
/// default. Booleans count as 0/1; enumerations have no numeric effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub parameter: String,
    pub coefficient: f64,
    pub mode: SensitivityMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableResponse {
    pub baseline: f64,
    /// Per-sample noise as a fraction of the mean.
    pub noise_sd: f64,
    /// Spread of the per-vehicle multiplicative offset, as a fraction.
    pub vehicle_effect_sd: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sensitivities: Vec<Sensitivity>,
}

/// A multiplier on an observable's baseline, active whenever the effective
/// parameter set equals `when`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedEffect {
    pub observable: String,
    pub multiplier: f64,
    pub when: ParameterSet,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    pub observables: BTreeMap<String, ObservableResponse>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub effects: Vec<InjectedEffect>,
}

impl ResponseModel {
    /// Every observable of `spec` needs a response, and every sensitivity
    /// must name a parameter of `spec`.
    pub fn check_against(&self, spec: &FunctionSpec) -> Result<(), ModelError> {
        for o in &spec.observables {
            if !self.observables.contains_key(&o.name) {
                return Err(ModelError::InvalidDefinition(format!(
                    "no ground-truth response for observable {:?}",
                    o.name
                )));
            }
        }
        for (name, r) in &self.observables {
            if !(r.noise_sd >= 0.0 && r.vehicle_effect_sd >= 0.0) {
                return Err(ModelError::InvalidDefinition(format!(
                    "response for {name:?}: negative spread"
                )));
            }
            for s in &r.sensitivities {
                if spec.parameter(&s.parameter).is_none() {
                    return Err(ModelError::UnknownParameter(s.parameter.clone()));
                }
            }
        }
        for e in &self.effects {
            if spec.observable(&e.observable).is_none() {
                return Err(ModelError::InvalidDefinition(format!(
                    "effect on unknown observable {:?}",
                    e.observable
                )));
            }
        }
        Ok(())
    }
}

/// One vehicle's draw from a [`ResponseModel`].
pub struct VehicleResponse {
    model: Arc<ResponseModel>,
    defaults: ParameterSet,
    vehicle_effect: HashMap<String, f64>,
    rng: ChaCha8Rng,
}

impl VehicleResponse {
    /// Draws the vehicle's random effects in observable-name order.
    pub fn new(model: Arc<ResponseModel>, spec: &FunctionSpec, mut rng: ChaCha8Rng) -> Self {
        let vehicle_effect = model
            .observables
            .iter()
            .map(|(name, r)| {
                let z: f64 = rng.sample(StandardNormal);
                (name.clone(), r.vehicle_effect_sd * z)
            })
            .collect();
        VehicleResponse {
            model,
            defaults: spec.local_defaults(),
            vehicle_effect,
            rng,
        }
    }

    /// The noise-free value for this vehicle under `params`.
    pub fn expected(&self, observable: &str, params: &ParameterSet) -> f64 {
        let Some(r) = self.model.observables.get(observable) else {
            return 0.0;
        };
        let mut value = r.baseline;
        for e in &self.model.effects {
            if e.observable == observable && &e.when == params {
                value *= e.multiplier;
            }
        }
        value *= 1.0 + self.vehicle_effect.get(observable).copied().unwrap_or(0.0);
        let mut additive = 0.0;
        for s in &r.sensitivities {
            let x = params.get(&s.parameter).map_or(0.0, |v| v.as_f64());
            let x0 = self.defaults.get(&s.parameter).map_or(0.0, |v| v.as_f64());
            match s.mode {
                SensitivityMode::Additive => additive += s.coefficient * (x - x0),
                SensitivityMode::Multiplicative => value *= 1.0 + s.coefficient * (x - x0),
            }
        }
        value + additive
    }
}

impl FunctionModel for VehicleResponse {
    fn sample(
        &mut self,
        observable: &ObservableSpec,
        params: &ParameterSet,
        _at: Timestamp,
    ) -> f64 {
        let mean = self.expected(&observable.name, params);
        let noise_sd = self
            .model
            .observables
            .get(&observable.name)
            .map_or(0.0, |r| r.noise_sd);
        let z: f64 = self.rng.sample(StandardNormal);
        mean * (1.0 + noise_sd * z)
    }
}
