use std::sync::Arc;
use std::thread;

use fleetlab::model::{
    EmbeddedSets, ExperimentState, FunctionMode, IndicatorPayload, LifecycleEvent, ModelError,
    ObservableKind, ParamValue, ParameterSet, SwitchPosition, TelemetryRecord, VariantTag, Vin,
};
use fleetlab::service::{replay, CloudService, ServiceConfig, ServiceError};
use fleetlab::sim::{
    default_experiment, default_function, generate_vins, DEFAULT_EXPERIMENT, PRIMARY_OBSERVABLE,
};
use fleetlab::store::RejectReason;

mod common;
use common::{at, experiment, running_service, t0, vin_in};

fn soc(x: f64) -> ParameterSet {
    ParameterSet::checked([("soc_target", ParamValue::Real(x))], &default_function()).unwrap()
}

/// Overrides as a client would send them, unchecked.
fn raw(value: serde_json::Value) -> ParameterSet {
    serde_json::from_value(value).unwrap()
}

fn code<T: std::fmt::Debug>(r: Result<T, ServiceError>) -> &'static str {
    r.expect_err("expected an error").code()
}

#[test]
fn silence_until_active() {
    let service = CloudService::new(ServiceConfig::default());
    service.register_function(default_function()).unwrap();
    service.create_experiment(experiment(), t0()).unwrap();
    let vin = vin_in("treatment");
    assert!(service.handshake(&vin, t0()).is_none());
    service
        .transition(DEFAULT_EXPERIMENT, LifecycleEvent::Activate, t0())
        .unwrap();
    let ind = service.handshake(&vin, at(1)).unwrap();
    assert_eq!(ind.variant_id, "treatment");
    assert_eq!(ind.payload, IndicatorPayload::CloudOverrides(soc(0.7)));
    assert_eq!(ind.refresh_period, Some(60.0));
    let control = service.handshake(&vin_in("control"), at(1)).unwrap();
    assert_eq!(
        control.payload,
        IndicatorPayload::CloudOverrides(ParameterSet::new())
    );
}

#[test]
fn ineligible_vehicles_get_silence() {
    let service = running_service();
    let outsider = fleetlab::sim::make_vin("ZZ99Z", 'N', 'G', 1);
    assert!(service.handshake(&outsider, t0()).is_none());
}

#[test]
fn pause_keeps_open_sessions_and_silences_new_ones() {
    let service = running_service();
    let a = vin_in("treatment");
    let b = vin_in("control");
    let token = service.handshake(&a, t0()).unwrap().session_token;
    service
        .transition(DEFAULT_EXPERIMENT, LifecycleEvent::Pause, at(10))
        .unwrap();
    assert!(service.handshake(&b, at(20)).is_none());
    assert!(service.poll(&token, at(30)).is_some());
    service
        .transition(DEFAULT_EXPERIMENT, LifecycleEvent::Resume, at(40))
        .unwrap();
    assert!(service.handshake(&b, at(50)).is_some());
}

#[test]
fn conclude_interrupts_sessions() {
    let service = running_service();
    let token = service
        .handshake(&vin_in("treatment"), t0())
        .unwrap()
        .session_token;
    assert_eq!(service.open_sessions(DEFAULT_EXPERIMENT), 1);
    let e = service
        .transition(DEFAULT_EXPERIMENT, LifecycleEvent::Conclude, at(5))
        .unwrap();
    assert_eq!(e.concluded_at, Some(at(5)));
    assert!(service.poll(&token, at(6)).is_none());
    assert_eq!(service.open_sessions(DEFAULT_EXPERIMENT), 0);
    assert!(service.handshake(&vin_in("treatment"), at(7)).is_none());
    assert_eq!(
        code(service.transition(DEFAULT_EXPERIMENT, LifecycleEvent::Resume, at(8))),
        "IllegalTransition"
    );
}

#[test]
fn adjust_is_validated_and_served_on_poll() {
    let service = running_service();
    let token = service
        .handshake(&vin_in("treatment"), t0())
        .unwrap()
        .session_token;

    let out_of_bounds = raw(serde_json::json!({"soc_target": 0.95}));
    assert_eq!(
        code(service.steer_adjust(DEFAULT_EXPERIMENT, "treatment", out_of_bounds, at(1))),
        "OutOfBounds"
    );
    let unknown = raw(serde_json::json!({"warp_drive": true}));
    assert_eq!(
        code(service.steer_adjust(DEFAULT_EXPERIMENT, "treatment", unknown, at(1))),
        "UnknownParameter"
    );
    let wrong_type = raw(serde_json::json!({"regen_level": 1.5}));
    assert_eq!(
        code(service.steer_adjust(DEFAULT_EXPERIMENT, "treatment", wrong_type, at(1))),
        "TypeMismatch"
    );
    assert_eq!(
        code(service.steer_adjust(DEFAULT_EXPERIMENT, "control", soc(0.8), at(1))),
        "UnknownVariant"
    );

    service
        .steer_adjust(DEFAULT_EXPERIMENT, "treatment", soc(0.8), at(2))
        .unwrap();
    let fresh = service.poll(&token, at(3)).unwrap();
    assert_eq!(fresh.payload, IndicatorPayload::CloudOverrides(soc(0.8)));
}

#[test]
fn legally_governed_bounds_hold() {
    let service = running_service();
    let over = raw(serde_json::json!({"max_charge_power_kw": 22.0}));
    assert_eq!(
        code(service.steer_adjust(DEFAULT_EXPERIMENT, "treatment", over, at(1))),
        "OutOfBounds"
    );
}

#[test]
fn layers_exclude_shared_parameters() {
    let service = running_service();
    let mut rival = experiment();
    rival.experiment_id = "rival".into();
    rival.salt = "rival".into();
    service.create_experiment(rival.clone(), t0()).unwrap();
    assert_eq!(
        code(service.transition("rival", LifecycleEvent::Activate, t0())),
        "LayerConflict"
    );

    let mut elsewhere = rival;
    elsewhere.experiment_id = "elsewhere".into();
    elsewhere.layer_id = "other-layer".into();
    service.create_experiment(elsewhere, t0()).unwrap();
    service
        .transition("elsewhere", LifecycleEvent::Activate, t0())
        .unwrap();

    let mut disjoint = experiment();
    disjoint.experiment_id = "disjoint".into();
    disjoint.variants[1].cloud_overrides = ParameterSet::checked(
        [("regen_level", ParamValue::Integer(3))],
        &default_function(),
    )
    .unwrap();
    service.create_experiment(disjoint, t0()).unwrap();
    service
        .transition("disjoint", LifecycleEvent::Activate, t0())
        .unwrap();
}

#[test]
fn create_rejects_bad_definitions() {
    let service = running_service();
    assert_eq!(
        code(service.create_experiment(experiment(), t0())),
        "DuplicateExperiment"
    );
    let mut bad = experiment();
    bad.experiment_id = "bad-alloc".into();
    bad.allocation = vec![0.7, 0.7];
    assert_eq!(
        code(service.create_experiment(bad, t0())),
        "AllocationInvalid"
    );
    let mut bad = experiment();
    bad.experiment_id = "bad-fn".into();
    bad.function_id = "nope".into();
    assert_eq!(
        code(service.create_experiment(bad, t0())),
        "UnknownFunction"
    );
    let mut bad = experiment();
    bad.experiment_id = "bad-variants".into();
    bad.variants.swap(0, 1);
    assert_eq!(
        code(service.create_experiment(bad, t0())),
        "InvalidVariants"
    );
}

#[test]
fn repartition_bumps_epoch_and_keeps_sessions() {
    let service = running_service();
    let vin = vin_in("treatment");
    let token = service.handshake(&vin, t0()).unwrap().session_token;
    let e = service.repartition(DEFAULT_EXPERIMENT, at(10)).unwrap();
    assert_eq!(e.epoch, 1);
    assert_eq!(service.poll(&token, at(11)).unwrap().epoch, 0);
    assert_eq!(service.handshake(&vin, at(12)).unwrap().epoch, 1);
}

#[test]
fn audit_replay_rebuilds_state_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let before = {
        let service = CloudService::open(ServiceConfig::default(), dir.path()).unwrap();
        service.register_function(default_function()).unwrap();
        service.create_experiment(experiment(), t0()).unwrap();
        service
            .transition(DEFAULT_EXPERIMENT, LifecycleEvent::Activate, at(1))
            .unwrap();
        service
            .steer_adjust(DEFAULT_EXPERIMENT, "treatment", soc(0.65), at(2))
            .unwrap();
        service.repartition(DEFAULT_EXPERIMENT, at(3)).unwrap();
        service
            .transition(DEFAULT_EXPERIMENT, LifecycleEvent::Pause, at(4))
            .unwrap();
        let audit = service.audit(None);
        assert_eq!(audit.len(), 5);
        assert_eq!(
            replay(&audit).unwrap()[DEFAULT_EXPERIMENT],
            service.experiment(DEFAULT_EXPERIMENT).unwrap()
        );
        (service.experiment(DEFAULT_EXPERIMENT).unwrap(), audit)
    };
    let service = CloudService::open(ServiceConfig::default(), dir.path()).unwrap();
    let after = service.experiment(DEFAULT_EXPERIMENT).unwrap();
    assert_eq!(after, before.0);
    assert_eq!(after.state, ExperimentState::Paused);
    assert_eq!(after.epoch, 1);
    assert_eq!(service.audit(Some(DEFAULT_EXPERIMENT)), before.1);
    assert!(service.function("energy_management").is_some());
}

fn telemetry(
    vin: &Vin,
    trip: &str,
    seq: u64,
    variant: &str,
    epoch: u32,
    value: f64,
) -> TelemetryRecord {
    TelemetryRecord {
        vin: vin.clone(),
        trip_id: trip.into(),
        sequence_number: seq,
        timestamp: at(seq as i64),
        observable: PRIMARY_OBSERVABLE.into(),
        value,
        unit: "kWh/km".into(),
        variant: VariantTag::parse(variant),
        experiment_id: Some(DEFAULT_EXPERIMENT.into()),
        epoch: Some(epoch),
        kind: ObservableKind::Stationary,
    }
}

#[test]
fn ingest_checks_credentials_and_records() {
    let service = running_service();
    let vin = vin_in("treatment");
    let other = vin_in("control");
    assert_eq!(
        code(service.ingest(
            vec![telemetry(&vin, "t", 0, "treatment", 0, 0.2)],
            "bogus",
            at(100)
        )),
        "UnknownSession"
    );
    let token = service.enroll(&vin);
    assert_eq!(service.enroll(&vin), token);
    let receipt = service
        .ingest(
            vec![
                telemetry(&vin, "t", 0, "treatment", 0, 0.2),
                telemetry(&other, "t", 1, "control", 0, 0.2),
                telemetry(&vin, "t", 0, "treatment", 0, 0.2),
            ],
            &token,
            at(100),
        )
        .unwrap();
    assert_eq!(receipt.accepted, 2);
    assert_eq!(receipt.inserted, 1);
    assert_eq!(receipt.rejected.len(), 1);
    assert_eq!(receipt.rejected[0].index, 1);
    assert_eq!(receipt.rejected[0].reason, RejectReason::VinMismatch);

    let big: Vec<TelemetryRecord> = (0..5_001)
        .map(|i| telemetry(&vin, "big", i, "treatment", 0, 0.2))
        .collect();
    assert_eq!(code(service.ingest(big, &token, at(100))), "BatchTooLarge");
}

#[test]
fn concurrent_ingestion_is_idempotent() {
    let service = Arc::new(running_service());
    let vins = generate_vins(8, 2);
    let handles: Vec<_> = (0..4)
        .map(|worker| {
            let service = Arc::clone(&service);
            let vins = vins.clone();
            thread::spawn(move || {
                // Every worker sends every record; only one copy may survive.
                for (i, vin) in vins
                    .iter()
                    .enumerate()
                    .cycle()
                    .skip(worker * 2)
                    .take(vins.len())
                {
                    let token = service.enroll(vin);
                    let batch = (0..200)
                        .map(|s| telemetry(vin, &format!("trip-{i}"), s, "control", 0, 0.18))
                        .collect();
                    service.ingest(batch, &token, at(1_000)).unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(service.store().len(), vins.len() * 200);
    let live = service.query_live(DEFAULT_EXPERIMENT).unwrap();
    assert_eq!(
        live.records_per_variant.get("control"),
        Some(&(vins.len() as u64 * 200))
    );
}

#[test]
fn report_scopes_epochs() {
    let service = running_service();
    for (i, vin) in generate_vins(40, 6).iter().enumerate() {
        let token = service.enroll(vin);
        let epoch = (i % 2) as u32;
        let variant = fleetlab::assignment::assign(vin, &experiment())
            .variant_id
            .unwrap();
        let value = if variant == "treatment" { 0.2 } else { 0.18 } + (i as f64) * 1e-4;
        service
            .ingest(
                vec![telemetry(vin, "t", 0, &variant, epoch, value)],
                &token,
                at(100),
            )
            .unwrap();
    }
    let r0 = service.report(DEFAULT_EXPERIMENT, Some(0)).unwrap();
    let r1 = service.report(DEFAULT_EXPERIMENT, Some(1)).unwrap();
    assert_eq!(r0.health.total_records, 20);
    assert_eq!(r1.health.total_records, 20);
    let current = service.report(DEFAULT_EXPERIMENT, None).unwrap();
    assert_eq!(current.epoch, 0);
    assert_eq!(code(service.report("missing", None)), "UnknownExperiment");
}

#[test]
fn empty_report_is_not_an_error() {
    let service = running_service();
    let r = service.report(DEFAULT_EXPERIMENT, None).unwrap();
    assert_eq!(r.health.total_records, 0);
    assert!(!r.health.srm.flagged);
    assert_eq!(
        r.metrics[0].comparisons[0].error.as_deref(),
        Some("InsufficientSample")
    );
}

#[test]
fn time_critical_functions_get_switch_positions() {
    let mut spec = default_function();
    spec.function_id = "brake_blend".into();
    spec.mode = FunctionMode::TimeCritical;
    let b = ParameterSet::checked([("regen_level", ParamValue::Integer(3))], &spec).unwrap();
    spec.embedded_sets = Some(EmbeddedSets {
        a: spec.local_defaults(),
        b: spec.local_defaults().merged(&b),
    });
    let service = CloudService::new(ServiceConfig::default());
    service.register_function(spec.clone()).unwrap();

    let mut e = default_experiment(&spec);
    e.variants[1].cloud_overrides = ParameterSet::new();
    service.create_experiment(e.clone(), t0()).unwrap();
    service
        .transition(&e.experiment_id, LifecycleEvent::Activate, t0())
        .unwrap();
    let vin = generate_vins(200, 1)
        .into_iter()
        .find(|v| fleetlab::assignment::assign(v, &e).variant_id.as_deref() == Some("treatment"))
        .unwrap();
    let ind = service.handshake(&vin, t0()).unwrap();
    assert_eq!(
        ind.payload,
        IndicatorPayload::SwitchPosition(SwitchPosition::B)
    );

    let mut overrides = default_experiment(&spec);
    overrides.experiment_id = "with-overrides".into();
    assert!(matches!(
        service.create_experiment(overrides, t0()),
        Err(ServiceError::Model(ModelError::InvalidVariants(_)))
    ));
}
