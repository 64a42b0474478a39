#![allow(dead_code)]

use chrono::{TimeZone, Utc};

use fleetlab::model::{Experiment, LifecycleEvent, Timestamp, Vin};
use fleetlab::service::{CloudService, ServiceConfig};
use fleetlab::sim::{default_experiment, default_function, generate_vins, DEFAULT_EXPERIMENT};

pub fn t0() -> Timestamp {
    Utc.with_ymd_and_hms(2024, 3, 1, 8, 0, 0).unwrap()
}

pub fn at(seconds: i64) -> Timestamp {
    t0() + chrono::TimeDelta::seconds(seconds)
}

/// A service running the stock experiment.
pub fn running_service() -> CloudService {
    let service = CloudService::new(ServiceConfig::default());
    service.register_function(default_function()).unwrap();
    service
        .create_experiment(default_experiment(&default_function()), t0())
        .unwrap();
    service
        .transition(DEFAULT_EXPERIMENT, LifecycleEvent::Activate, t0())
        .unwrap();
    service
}

pub fn experiment() -> Experiment {
    default_experiment(&default_function())
}

/// First generated VIN that the stock experiment places in `variant`.
pub fn vin_in(variant: &str) -> Vin {
    let e = experiment();
    generate_vins(1_000, 3)
        .into_iter()
        .find(|v| fleetlab::assignment::assign(v, &e).variant_id.as_deref() == Some(variant))
        .expect("some VIN lands in every variant")
}
