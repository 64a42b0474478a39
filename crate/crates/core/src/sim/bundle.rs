//! The default function bundle: one cloud-tuned energy-management function
//! with 58 observables, plus its ground-truth response model.

use std::collections::BTreeMap;

use super::response::{ObservableResponse, ResponseModel, Sensitivity, SensitivityMode};
use crate::model::{
    FunctionMode, FunctionSpec, ObservableSpec, ParamValue, ParameterDefinition, ParameterKind,
};

pub const DEFAULT_FUNCTION: &str = "energy_management";
/// The observable the default experiment's primary metric is built on.
pub const PRIMARY_OBSERVABLE: &str = "energy_per_km";

// (name, sampling period s, unit, baseline, plausible min, plausible max)
const DYNAMIC: &[(&str, f64, &str, f64, f64, f64)] = &[
    ("vehicle_speed", 60.0, "km/h", 45.0, 0.0, 250.0),
    ("battery_soc", 60.0, "%", 62.0, 0.0, 100.0),
    ("battery_temperature", 120.0, "degC", 24.0, -40.0, 80.0),
    ("cabin_temperature", 120.0, "degC", 21.0, -40.0, 80.0),
    ("motor_power", 60.0, "kW", 14.0, -150.0, 250.0),
    ("regen_power", 60.0, "kW", 4.0, 0.0, 150.0),
    ("hv_battery_current", 60.0, "A", 38.0, -500.0, 500.0),
    ("hv_battery_voltage", 120.0, "V", 390.0, 250.0, 450.0),
    ("auxiliary_load", 300.0, "kW", 0.9, 0.0, 10.0),
    ("ambient_temperature", 600.0, "degC", 12.0, -40.0, 55.0),
    ("coolant_temperature", 300.0, "degC", 35.0, -40.0, 120.0),
    ("tyre_pressure_front", 600.0, "bar", 2.5, 1.0, 4.0),
];

// (name, unit, baseline, plausible min, plausible max)
const STATIONARY: &[(&str, &str, f64, f64, f64)] = &[
    ("energy_per_km", "kWh/km", 0.18, 0.05, 0.6),
    ("trip_energy", "kWh", 4.4, 0.0, 200.0),
    ("regen_energy", "kWh", 0.8, 0.0, 100.0),
    ("climate_energy", "kWh", 0.5, 0.0, 50.0),
    ("auxiliary_energy", "kWh", 0.3, 0.0, 50.0),
    ("soc_start", "%", 68.0, 0.0, 100.0),
    ("soc_end", "%", 60.0, 0.0, 100.0),
    ("soc_delta", "%", 8.0, -100.0, 100.0),
    ("avg_speed", "km/h", 45.0, 0.0, 250.0),
    ("max_speed", "km/h", 82.0, 0.0, 250.0),
    ("trip_duration", "min", 32.0, 0.0, 1440.0),
    ("idle_time", "min", 3.0, 0.0, 1440.0),
    ("hard_brake_count", "count", 2.0, 0.0, 1000.0),
    ("hard_accel_count", "count", 3.0, 0.0, 1000.0),
    ("eco_mode_share", "%", 20.0, 0.0, 100.0),
    ("regen_share", "%", 18.0, 0.0, 100.0),
    ("battery_temp_start", "degC", 18.0, -40.0, 80.0),
    ("battery_temp_end", "degC", 26.0, -40.0, 80.0),
    ("battery_temp_max", "degC", 29.0, -40.0, 80.0),
    ("cabin_temp_final", "degC", 21.5, -40.0, 80.0),
    ("precondition_energy", "kWh", 0.4, 0.0, 20.0),
    ("precondition_duration", "min", 12.0, 0.0, 120.0),
    ("charge_events", "count", 0.4, 0.0, 20.0),
    ("charge_energy", "kWh", 9.0, 0.0, 200.0),
    ("max_charge_power", "kW", 10.5, 0.0, 350.0),
    ("range_estimate_start", "km", 290.0, 0.0, 1000.0),
    ("range_estimate_end", "km", 255.0, 0.0, 1000.0),
    ("range_estimate_error", "km", 6.0, -200.0, 200.0),
    ("odometer", "km", 18_500.0, 0.0, 1_000_000.0),
    ("hvac_on_time", "min", 25.0, 0.0, 1440.0),
    ("seat_heater_time", "min", 8.0, 0.0, 1440.0),
    ("window_defrost_time", "min", 1.5, 0.0, 1440.0),
    ("dc_dc_losses", "kWh", 0.05, 0.0, 10.0),
    ("inverter_losses", "kWh", 0.15, 0.0, 10.0),
    ("motor_losses", "kWh", 0.3, 0.0, 20.0),
    ("battery_losses", "kWh", 0.1, 0.0, 10.0),
    ("thermal_management_energy", "kWh", 0.35, 0.0, 20.0),
    ("battery_cell_delta_v", "mV", 12.0, 0.0, 500.0),
    ("battery_soh", "%", 96.0, 0.0, 100.0),
    ("insulation_resistance", "kOhm", 1_800.0, 0.0, 100_000.0),
    ("brake_pad_wear", "%", 22.0, 0.0, 100.0),
    ("tyre_wear_index", "index", 0.3, 0.0, 1.0),
    ("torque_request_mean", "Nm", 85.0, -400.0, 600.0),
    ("pedal_activity_index", "index", 0.45, 0.0, 1.0),
    ("cruise_control_share", "%", 14.0, 0.0, 100.0),
    ("lane_assist_share", "%", 30.0, 0.0, 100.0),
];

fn param(
    name: &str,
    kind: ParameterKind,
    default: ParamValue,
    bounds: Option<(ParamValue, ParamValue)>,
    legally_governed: bool,
    choices: &[&str],
) -> ParameterDefinition {
    let (lower_bound, upper_bound) = match bounds {
        Some((lo, hi)) => (Some(lo), Some(hi)),
        None => (None, None),
    };
    ParameterDefinition {
        name: name.into(),
        kind,
        local_default: default,
        lower_bound,
        upper_bound,
        legally_governed,
        choices: choices.iter().map(|c| c.to_string()).collect(),
    }
}

/// The energy-management function as shipped in the default release.
pub fn default_function() -> FunctionSpec {
    use ParamValue::*;
    use ParameterKind as K;
    let parameters = vec![
        param(
            "soc_target",
            K::Real,
            Real(0.6),
            Some((Real(0.4), Real(0.9))),
            false,
            &[],
        ),
        param(
            "regen_level",
            K::Integer,
            Integer(2),
            Some((Integer(0), Integer(3))),
            false,
            &[],
        ),
        param("eco_mode", K::Boolean, Boolean(false), None, false, &[]),
        param(
            "climate_strategy",
            K::Enumeration,
            Enumeration("balanced".into()),
            None,
            false,
            &["comfort", "balanced", "eco"],
        ),
        param(
            "precondition_minutes",
            K::Integer,
            Integer(15),
            Some((Integer(0), Integer(60))),
            false,
            &[],
        ),
        param(
            "max_charge_power_kw",
            K::Real,
            Real(11.0),
            Some((Real(3.7), Real(11.0))),
            true,
            &[],
        ),
    ];
    let observables = DYNAMIC
        .iter()
        .map(|(name, period, unit, _, lo, hi)| {
            ObservableSpec::dynamic(name, *period, unit).with_range(*lo, *hi)
        })
        .chain(STATIONARY.iter().map(|(name, unit, _, lo, hi)| {
            ObservableSpec::stationary(name, unit).with_range(*lo, *hi)
        }))
        .collect();
    FunctionSpec {
        function_id: DEFAULT_FUNCTION.into(),
        parameters,
        observables,
        mode: FunctionMode::CloudTuned,
        embedded_sets: None,
    }
    .validate()
    .expect("default bundle is valid")
}

/// Ground truth for [`default_function`]. The primary observable has a small
/// between-vehicle spread and no parameter sensitivity, so only injected
/// effects move it.
pub fn default_response() -> ResponseModel {
    let mut observables = BTreeMap::new();
    let base = |baseline: f64| ObservableResponse {
        baseline,
        noise_sd: 0.05,
        vehicle_effect_sd: 0.03,
        sensitivities: Vec::new(),
    };
    for (name, _, _, baseline, _, _) in DYNAMIC {
        observables.insert(name.to_string(), base(*baseline));
    }
    for (name, _, baseline, _, _) in STATIONARY {
        observables.insert(name.to_string(), base(*baseline));
    }
    let set = |m: &mut BTreeMap<String, ObservableResponse>,
               name: &str,
               f: &dyn Fn(&mut ObservableResponse)| {
        f(m.get_mut(name).expect("observable in bundle"));
    };
    set(&mut observables, PRIMARY_OBSERVABLE, &|r| {
        r.noise_sd = 0.06;
        r.vehicle_effect_sd = 0.01;
    });
    set(&mut observables, "soc_end", &|r| {
        r.sensitivities.push(Sensitivity {
            parameter: "soc_target".into(),
            coefficient: 40.0,
            mode: SensitivityMode::Additive,
        })
    });
    set(&mut observables, "regen_energy", &|r| {
        r.sensitivities.push(Sensitivity {
            parameter: "regen_level".into(),
            coefficient: 0.12,
            mode: SensitivityMode::Multiplicative,
        })
    });
    set(&mut observables, "eco_mode_share", &|r| {
        r.sensitivities.push(Sensitivity {
            parameter: "eco_mode".into(),
            coefficient: 60.0,
            mode: SensitivityMode::Additive,
        })
    });
    set(&mut observables, "precondition_energy", &|r| {
        r.sensitivities.push(Sensitivity {
            parameter: "precondition_minutes".into(),
            coefficient: 0.03,
            mode: SensitivityMode::Additive,
        })
    });
    set(&mut observables, "max_charge_power", &|r| {
        r.sensitivities.push(Sensitivity {
            parameter: "max_charge_power_kw".into(),
            coefficient: 0.95,
            mode: SensitivityMode::Additive,
        })
    });
    ResponseModel {
        observables,
        effects: Vec::new(),
    }
}
