use std::sync::Arc;

use fleetlab::agent::VehicleAgent;
use fleetlab::agent::{
    AgentConfig, AgentEvent, CloudLink, FallbackReason, FunctionModel, LinkError, Mode, UploadAck,
};
use fleetlab::model::{
    IndicatorPayload, LifecycleEvent, ObservableSpec, ParamValue, ParameterSet, StatusIndicator,
    TelemetryRecord, Timestamp, Vin,
};
use fleetlab::service::CloudService;
use fleetlab::sim::{default_function, DEFAULT_EXPERIMENT};

mod common;
use common::{at, running_service, t0, vin_in};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Fault {
    None,
    Silence,
    Timeout,
    Partition,
    Malformed,
}

/// An in-process link with a switchable fault.
struct Link {
    service: Arc<CloudService>,
    fault: Fault,
    uploads: usize,
}

impl Link {
    fn new(service: Arc<CloudService>) -> Self {
        Link {
            service,
            fault: Fault::None,
            uploads: 0,
        }
    }

    fn corrupt(i: StatusIndicator) -> StatusIndicator {
        let overrides: ParameterSet =
            serde_json::from_value(serde_json::json!({"soc_target": 7.0})).unwrap();
        StatusIndicator {
            payload: IndicatorPayload::CloudOverrides(overrides),
            ..i
        }
    }
}

impl CloudLink for Link {
    fn handshake(
        &mut self,
        vin: &Vin,
        now: Timestamp,
        _timeout_s: f64,
    ) -> Result<Option<StatusIndicator>, LinkError> {
        match self.fault {
            Fault::Silence => Ok(None),
            Fault::Timeout => Err(LinkError::Timeout),
            Fault::Partition => Err(LinkError::Transport("down".into())),
            Fault::Malformed => Ok(self.service.handshake(vin, now).map(Self::corrupt)),
            Fault::None => Ok(self.service.handshake(vin, now)),
        }
    }

    fn poll(&mut self, token: &str, now: Timestamp) -> Result<Option<StatusIndicator>, LinkError> {
        match self.fault {
            Fault::Timeout => Err(LinkError::Timeout),
            Fault::Partition => Err(LinkError::Transport("down".into())),
            Fault::Malformed => Ok(self.service.poll(token, now).map(Self::corrupt)),
            Fault::None | Fault::Silence => Ok(self.service.poll(token, now)),
        }
    }

    fn upload(
        &mut self,
        credential: &str,
        batch: &[TelemetryRecord],
        now: Timestamp,
    ) -> Result<UploadAck, LinkError> {
        if matches!(self.fault, Fault::Partition | Fault::Timeout) {
            return Err(LinkError::Transport("down".into()));
        }
        self.uploads += 1;
        let receipt = self
            .service
            .ingest(batch.to_vec(), credential, now)
            .map_err(|e| LinkError::Rejected(e.to_string()))?;
        Ok(UploadAck {
            accepted: receipt.accepted,
            rejected: receipt.rejected.len(),
        })
    }

    fn close_session(&mut self, token: &str, _now: Timestamp) {
        self.service.close_session(token);
    }
}

/// Every sample is the soc target it ran with.
struct Echo;

impl FunctionModel for Echo {
    fn sample(
        &mut self,
        _observable: &ObservableSpec,
        params: &ParameterSet,
        _at: Timestamp,
    ) -> f64 {
        params.get("soc_target").map_or(0.0, ParamValue::as_f64)
    }
}

fn setup(variant: &str) -> (Arc<CloudService>, VehicleAgent, Link) {
    let service = Arc::new(running_service());
    let vin = vin_in(variant);
    let token = service.enroll(&vin);
    let agent = VehicleAgent::new(vin, Arc::new(default_function()), AgentConfig::default())
        .with_device_token(token);
    let link = Link::new(Arc::clone(&service));
    (service, agent, link)
}

fn drive(agent: &mut VehicleAgent, link: &mut Link, from_s: i64, to_s: i64) {
    let mut t = from_s;
    while t < to_s {
        t = (t + 30).min(to_s);
        agent.step(at(t), &mut Echo, link);
    }
}

fn locals(agent: &mut VehicleAgent) -> Vec<FallbackReason> {
    agent
        .take_events()
        .into_iter()
        .filter_map(|e| match e {
            AgentEvent::Local { reason } => Some(reason),
            _ => None,
        })
        .collect()
}

fn stored(service: &CloudService) -> Vec<TelemetryRecord> {
    service
        .store()
        .with_records(|r| r.iter().map(|s| s.record.clone()).collect())
}

#[test]
fn healthy_trip_is_labelled_and_uploaded() {
    let (service, mut agent, mut link) = setup("treatment");
    agent.key_on(t0(), false, &mut link);
    assert!(matches!(agent.mode(), Mode::CloudMode(_)));
    assert_eq!(
        agent.effective_parameters().get("soc_target"),
        Some(&ParamValue::Real(0.7))
    );
    drive(&mut agent, &mut link, 0, 1_200);
    agent.key_off(at(1_200), &mut Echo, &mut link);
    assert_eq!(agent.buffered(), 0);
    let records = stored(&service);
    assert!(!records.is_empty());
    for r in &records {
        assert_eq!(r.variant.as_str(), "treatment");
        assert_eq!(r.epoch, Some(0));
        assert_eq!(r.experiment_id.as_deref(), Some(DEFAULT_EXPERIMENT));
    }
    let c = agent.counters();
    assert_eq!(c.generated, records.len() as u64);
    assert_eq!(c.acknowledged, c.generated);
}

#[test]
fn handshake_faults_run_local() {
    for (fault, reason) in [
        (Fault::Silence, FallbackReason::Silence),
        (Fault::Timeout, FallbackReason::Timeout),
        (Fault::Partition, FallbackReason::Transport),
        (Fault::Malformed, FallbackReason::Malformed),
    ] {
        let (service, mut agent, mut link) = setup("treatment");
        link.fault = fault;
        agent.key_on(t0(), false, &mut link);
        assert_eq!(agent.mode(), &Mode::LocalMode, "{fault:?}");
        assert_eq!(locals(&mut agent), vec![reason]);
        assert_eq!(
            agent.effective_parameters(),
            &default_function().local_defaults()
        );
        drive(&mut agent, &mut link, 0, 600);
        link.fault = Fault::None;
        agent.key_off(at(600), &mut Echo, &mut link);
        let records = stored(&service);
        assert!(!records.is_empty());
        assert!(
            records
                .iter()
                .all(|r| r.variant.is_local() && r.experiment_id.is_none()),
            "{fault:?}"
        );
        assert!(records.iter().all(|r| r.value == 0.6));
    }
}

#[test]
fn mid_trip_partition_falls_back_within_timeout() {
    let (service, mut agent, mut link) = setup("treatment");
    agent.key_on(t0(), false, &mut link);
    drive(&mut agent, &mut link, 0, 300);
    link.fault = Fault::Partition;
    let cut = 300;
    drive(&mut agent, &mut link, 300, 1_800);
    assert_eq!(agent.mode(), &Mode::LocalMode);
    let reasons = locals(&mut agent);
    assert_eq!(reasons, vec![FallbackReason::Timeout]);
    link.fault = Fault::None;
    agent.key_off(at(1_800), &mut Echo, &mut link);
    let records = stored(&service);
    let late: Vec<_> = records
        .iter()
        .filter(|r| r.timestamp > at(cut + 120))
        .collect();
    assert!(!late.is_empty());
    assert!(late.iter().all(|r| r.variant.is_local()));
    // The fallback opened a new trip segment instead of relabelling the old one.
    let trips: std::collections::BTreeSet<_> = records
        .iter()
        .map(|r| (r.trip_id.clone(), r.variant.clone()))
        .collect();
    assert_eq!(trips.len(), 2);
    assert!(records.iter().any(|r| r.variant.as_str() == "treatment"));
}

#[test]
fn malformed_refresh_falls_back_at_once() {
    let (_service, mut agent, mut link) = setup("treatment");
    agent.key_on(t0(), false, &mut link);
    drive(&mut agent, &mut link, 0, 90);
    link.fault = Fault::Malformed;
    drive(&mut agent, &mut link, 90, 200);
    assert_eq!(agent.mode(), &Mode::LocalMode);
    assert_eq!(locals(&mut agent), vec![FallbackReason::Malformed]);
}

#[test]
fn conclusion_reaches_vehicles_on_next_poll() {
    let (service, mut agent, mut link) = setup("treatment");
    agent.key_on(t0(), false, &mut link);
    drive(&mut agent, &mut link, 0, 100);
    service
        .transition(DEFAULT_EXPERIMENT, LifecycleEvent::Conclude, at(100))
        .unwrap();
    drive(&mut agent, &mut link, 100, 400);
    assert_eq!(agent.mode(), &Mode::LocalMode);
    assert_eq!(locals(&mut agent), vec![FallbackReason::Silence]);
    agent.key_off(at(400), &mut Echo, &mut link);
    assert!(stored(&service)
        .iter()
        .filter(|r| r.timestamp > at(100 + 120))
        .all(|r| r.variant.is_local()));
}

#[test]
fn interrupt_persists_until_cleared() {
    let (service, mut agent, mut link) = setup("treatment");
    agent.key_on(t0(), false, &mut link);
    drive(&mut agent, &mut link, 0, 100);
    agent.user_interrupt(at(100), &mut link);
    assert_eq!(agent.mode(), &Mode::LocalMode);
    assert!(agent.user_opt_out());
    assert_eq!(service.open_sessions(DEFAULT_EXPERIMENT), 0);
    drive(&mut agent, &mut link, 100, 300);
    agent.key_off(at(300), &mut Echo, &mut link);

    agent.key_on(at(1_000), false, &mut link);
    assert_eq!(agent.mode(), &Mode::LocalMode);
    assert!(locals(&mut agent).contains(&FallbackReason::OptOut));
    agent.key_off(at(1_100), &mut Echo, &mut link);

    agent.key_on(at(2_000), true, &mut link);
    assert!(matches!(agent.mode(), Mode::CloudMode(_)));
    agent.key_off(at(2_100), &mut Echo, &mut link);

    let records = stored(&service);
    assert!(records
        .iter()
        .any(|r| &*r.observable == fleetlab::agent::INTERRUPT_OBSERVABLE));
    assert!(records
        .iter()
        .filter(|r| r.timestamp > at(100) && r.timestamp < at(2_000))
        .all(|r| r.variant.is_local()));
}

#[test]
fn adjust_is_applied_on_refresh() {
    let (service, mut agent, mut link) = setup("treatment");
    agent.key_on(t0(), false, &mut link);
    let overrides =
        ParameterSet::checked([("soc_target", ParamValue::Real(0.8))], &default_function())
            .unwrap();
    service
        .steer_adjust(DEFAULT_EXPERIMENT, "treatment", overrides, at(10))
        .unwrap();
    drive(&mut agent, &mut link, 0, 90);
    assert_eq!(
        agent.effective_parameters().get("soc_target"),
        Some(&ParamValue::Real(0.8))
    );
    assert!(agent
        .take_events()
        .contains(&AgentEvent::Refreshed { changed: true }));
}

#[test]
fn failed_uploads_stay_buffered_and_retry() {
    let (service, mut agent, mut link) = setup("control");
    agent.key_on(t0(), false, &mut link);
    link.fault = Fault::Timeout;
    drive(&mut agent, &mut link, 0, 900);
    agent.key_off(at(900), &mut Echo, &mut link);
    assert!(agent.buffered() > 0);
    assert!(service.store().is_empty());
    let buffered = agent.buffered();

    link.fault = Fault::None;
    agent.key_on(at(5_000), false, &mut link);
    assert_eq!(agent.buffered(), 0);
    assert_eq!(service.store().len(), buffered);
}

#[test]
fn full_buffer_drops_oldest_and_reports_it() {
    let service = Arc::new(running_service());
    let vin = vin_in("control");
    let token = service.enroll(&vin);
    let config = AgentConfig {
        buffer_capacity: 50,
        ..AgentConfig::default()
    };
    let mut agent =
        VehicleAgent::new(vin, Arc::new(default_function()), config).with_device_token(token);
    let mut link = Link::new(Arc::clone(&service));
    agent.key_on(t0(), false, &mut link);
    link.fault = Fault::Timeout;
    drive(&mut agent, &mut link, 0, 3_600);
    assert!(agent.buffered() <= 50);
    assert!(agent.counters().dropped > 0);
    link.fault = Fault::None;
    agent.key_off(at(3_600), &mut Echo, &mut link);
    assert!(stored(&service)
        .iter()
        .any(|r| &*r.observable == fleetlab::agent::DROPPED_OBSERVABLE));
}
