//! On-vehicle experiment agent.
//!
//! The agent is a single-threaded state machine driven by an external clock.
//! Every failure on the cloud path resolves to local parameters: silence,
//! timeouts, transport errors and malformed indicators all end in
//! [`Mode::LocalMode`]. The variant label is fixed per trip segment; when the
//! agent falls back mid-trip it closes the current segment and continues in a
//! fresh `Local` segment, so no trip mixes labels.

use std::collections::VecDeque;
use std::sync::Arc;

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};

use crate::model::{
    resolve_parameters, FunctionMode, FunctionSpec, IndicatorPayload, Name, ObservableKind,
    ObservableSpec, ParameterSet, StatusIndicator, SwitchPosition, TelemetryRecord, Timestamp,
    VariantTag, Vin,
};

/// Stationary event observable written once per manual interruption.
pub const INTERRUPT_OBSERVABLE: &str = "user_interrupt";
/// Stationary event observable carrying the number of records evicted from a
/// full buffer.
pub const DROPPED_OBSERVABLE: &str = "dropped_records";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub handshake_timeout_s: f64,
    /// `None` disables mid-trip refresh: parameters change only at key-on.
    pub poll_period_s: Option<f64>,
    pub fallback_timeout_s: f64,
    pub buffer_capacity: usize,
    pub flush_interval_s: f64,
    pub backoff_base_s: f64,
    pub backoff_cap_s: f64,
    pub max_batch: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            handshake_timeout_s: 5.0,
            poll_period_s: Some(60.0),
            fallback_timeout_s: 120.0,
            buffer_capacity: 10_000,
            flush_interval_s: 120.0,
            backoff_base_s: 30.0,
            backoff_cap_s: 600.0,
            max_batch: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkError {
    Timeout,
    Transport(String),
    /// The service answered but refused the request, e.g. an unknown session.
    Rejected(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UploadAck {
    pub accepted: usize,
    pub rejected: usize,
}

/// The vehicle's view of the cloud. `Ok(None)` is silence.
pub trait CloudLink {
    fn handshake(
        &mut self,
        vin: &Vin,
        now: Timestamp,
        timeout_s: f64,
    ) -> Result<Option<StatusIndicator>, LinkError>;

    fn poll(
        &mut self,
        session_token: &str,
        now: Timestamp,
    ) -> Result<Option<StatusIndicator>, LinkError>;

    fn upload(
        &mut self,
        credential: &str,
        batch: &[TelemetryRecord],
        now: Timestamp,
    ) -> Result<UploadAck, LinkError>;

    fn close_session(&mut self, session_token: &str, now: Timestamp);
}

/// Ground-truth behaviour of the function under test.
pub trait FunctionModel {
    fn sample(&mut self, observable: &ObservableSpec, params: &ParameterSet, at: Timestamp) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Off,
    AwaitingHandshake,
    LocalMode,
    CloudMode(StatusIndicator),
    SwitchMode(StatusIndicator),
}

impl Mode {
    pub fn is_cloud(&self) -> bool {
        matches!(self, Mode::CloudMode(_) | Mode::SwitchMode(_))
    }

    pub fn indicator(&self) -> Option<&StatusIndicator> {
        match self {
            Mode::CloudMode(i) | Mode::SwitchMode(i) => Some(i),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Off => "off",
            Mode::AwaitingHandshake => "awaiting_handshake",
            Mode::LocalMode => "local",
            Mode::CloudMode(_) => "cloud",
            Mode::SwitchMode(_) => "switch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackReason {
    Silence,
    Timeout,
    Transport,
    Malformed,
    Interrupt,
    OptOut,
}

/// Things the agent did that a harness may want to log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AgentEvent {
    Handshake {
        experiment_id: String,
        variant_id: String,
        epoch: u32,
    },
    Local {
        reason: FallbackReason,
    },
    Refreshed {
        changed: bool,
    },
    RefreshIgnored,
    Interrupted,
    Dropped {
        records: usize,
    },
    Flushed {
        records: usize,
        rejected: usize,
    },
    FlushFailed {
        retry_in_s: f64,
    },
    TripOpened {
        trip_id: String,
        variant: String,
    },
    TripClosed {
        trip_id: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripContext {
    pub trip_id: Name,
    pub started_at: Timestamp,
    pub odometer_start: f64,
    pub variant_locked: VariantTag,
    pub experiment_id: Option<Name>,
    pub epoch: Option<u32>,
    pub sequence_counter: u64,
    /// (observable index in the spec, next due sample) per dynamic observable.
    next_sample: Vec<(usize, Timestamp)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentCounters {
    pub generated: u64,
    pub acknowledged: u64,
    pub rejected: u64,
    pub dropped: u64,
    pub interrupts: u64,
}

pub struct VehicleAgent {
    vin: Vin,
    spec: Arc<FunctionSpec>,
    config: AgentConfig,
    mode: Mode,
    trip: Option<TripContext>,
    buffer: VecDeque<TelemetryRecord>,
    user_opt_out: bool,
    effective: ParameterSet,
    last_contact: Option<Timestamp>,
    last_indicator_refresh: Option<Timestamp>,
    next_poll: Option<Timestamp>,
    next_flush: Option<Timestamp>,
    flush_failures: u32,
    trip_counter: u64,
    odometer: f64,
    device_token: Option<String>,
    session_token: Option<String>,
    counters: AgentCounters,
    events: Vec<AgentEvent>,
}

pub(crate) fn seconds(s: f64) -> TimeDelta {
    TimeDelta::milliseconds((s * 1000.0).round() as i64)
}

impl VehicleAgent {
    pub fn new(vin: Vin, spec: Arc<FunctionSpec>, config: AgentConfig) -> Self {
        let effective = resolve_parameters(&spec, None);
        VehicleAgent {
            vin,
            spec,
            config,
            mode: Mode::Off,
            trip: None,
            buffer: VecDeque::new(),
            user_opt_out: false,
            effective,
            last_contact: None,
            last_indicator_refresh: None,
            next_poll: None,
            next_flush: None,
            flush_failures: 0,
            trip_counter: 0,
            odometer: 0.0,
            device_token: None,
            session_token: None,
            counters: AgentCounters::default(),
            events: Vec::new(),
        }
    }

    /// Sets the credential used for uploads outside an open session.
    pub fn with_device_token(mut self, token: String) -> Self {
        self.device_token = Some(token);
        self
    }

    pub fn vin(&self) -> &Vin {
        &self.vin
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    pub fn trip(&self) -> Option<&TripContext> {
        self.trip.as_ref()
    }

    pub fn effective_parameters(&self) -> &ParameterSet {
        &self.effective
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn buffer(&self) -> impl Iterator<Item = &TelemetryRecord> {
        self.buffer.iter()
    }

    pub fn user_opt_out(&self) -> bool {
        self.user_opt_out
    }

    pub fn last_indicator_refresh(&self) -> Option<Timestamp> {
        self.last_indicator_refresh
    }

    pub fn counters(&self) -> AgentCounters {
        self.counters
    }

    pub fn add_distance(&mut self, km: f64) {
        self.odometer += km;
    }

    pub fn odometer(&self) -> f64 {
        self.odometer
    }

    /// The earliest time [`VehicleAgent::step`] has a refresh poll or an
    /// upload to do.
    pub fn next_wakeup(&self) -> Option<Timestamp> {
        let poll = self.next_poll.filter(|_| self.mode.is_cloud());
        match (poll, self.next_flush) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn take_events(&mut self) -> Vec<AgentEvent> {
        std::mem::take(&mut self.events)
    }

    /// Starts a trip. Handshakes unless the driver has opted out; any failure
    /// lands in local mode. `clear_opt_out` models the driver re-enabling
    /// experiments at this key-on.
    pub fn key_on(&mut self, now: Timestamp, clear_opt_out: bool, link: &mut dyn CloudLink) {
        if self.mode != Mode::Off {
            return;
        }
        if clear_opt_out {
            self.user_opt_out = false;
        }
        self.mode = Mode::AwaitingHandshake;
        let result = if self.user_opt_out {
            Err(FallbackReason::OptOut)
        } else {
            match link.handshake(&self.vin, now, self.config.handshake_timeout_s) {
                Ok(Some(ind)) => match ind.validate_for(&self.spec) {
                    Ok(()) => Ok(ind),
                    Err(_) => Err(FallbackReason::Malformed),
                },
                Ok(None) => Err(FallbackReason::Silence),
                Err(LinkError::Timeout) => Err(FallbackReason::Timeout),
                Err(_) => Err(FallbackReason::Transport),
            }
        };
        match result {
            Ok(ind) => {
                self.events.push(AgentEvent::Handshake {
                    experiment_id: ind.experiment_id.clone(),
                    variant_id: ind.variant_id.clone(),
                    epoch: ind.epoch,
                });
                self.last_contact = Some(now);
                self.last_indicator_refresh = Some(now);
                self.session_token = Some(ind.session_token.clone());
                self.next_poll = self.config.poll_period_s.map(|p| now + seconds(p));
                self.enter_cloud(ind);
            }
            Err(reason) => {
                self.events.push(AgentEvent::Local { reason });
                self.enter_local();
            }
        }
        self.open_trip(now);
        // Deliver whatever an earlier trip left behind.
        self.next_flush = Some(now);
        self.flush_due(now, link);
    }

    /// Advances the trip to `now`: refresh polls, dynamic samples and
    /// periodic uploads that have come due.
    pub fn step(
        &mut self,
        now: Timestamp,
        model: &mut dyn FunctionModel,
        link: &mut dyn CloudLink,
    ) {
        if self.trip.is_none() {
            return;
        }
        self.sample_dynamic(now, model);
        if let Some(due) = self.next_poll {
            if self.mode.is_cloud() && due <= now {
                self.refresh_indicator(now, link);
            }
        }
        self.flush_due(now, link);
    }

    /// Polls the cloud for a refreshed indicator.
    pub fn refresh_indicator(&mut self, now: Timestamp, link: &mut dyn CloudLink) {
        let (Some(indicator), Some(period)) =
            (self.mode.indicator().cloned(), self.config.poll_period_s)
        else {
            return;
        };
        let switch = matches!(self.mode, Mode::SwitchMode(_));
        match link.poll(&indicator.session_token, now) {
            Ok(Some(fresh)) => {
                if fresh.validate_for(&self.spec).is_err() {
                    if switch {
                        // Both sets shipped in the release, so holding the
                        // current position is safe.
                        self.poll_failed(now, period, now);
                    } else {
                        self.fall_back(now, FallbackReason::Malformed, link);
                    }
                    return;
                }
                self.last_contact = Some(now);
                self.next_poll = Some(now + seconds(period));
                let same_arm = fresh.experiment_id == indicator.experiment_id
                    && fresh.epoch == indicator.epoch
                    && fresh.variant_id == indicator.variant_id;
                if !same_arm {
                    self.events.push(AgentEvent::RefreshIgnored);
                    return;
                }
                self.last_indicator_refresh = Some(now);
                let changed = fresh.payload != indicator.payload;
                self.events.push(AgentEvent::Refreshed { changed });
                self.enter_cloud(fresh);
            }
            Ok(None) => {
                // The session is gone: the experiment was concluded or paused out.
                self.fall_back(now, FallbackReason::Silence, link);
            }
            Err(_) => {
                let last = self.last_contact.unwrap_or(now);
                self.poll_failed(now, period, last);
                if !switch && now - last >= seconds(self.config.fallback_timeout_s) {
                    self.fall_back(now, FallbackReason::Timeout, link);
                }
            }
        }
    }

    fn poll_failed(&mut self, now: Timestamp, period: f64, last_contact: Timestamp) {
        let deadline = last_contact + seconds(self.config.fallback_timeout_s);
        let next = now + seconds(period);
        self.next_poll = Some(if deadline > now {
            next.min(deadline)
        } else {
            next
        });
    }

    /// The driver switches experimentation off.
    pub fn user_interrupt(&mut self, now: Timestamp, link: &mut dyn CloudLink) {
        if self.mode == Mode::Off {
            return;
        }
        self.user_opt_out = true;
        self.counters.interrupts += 1;
        self.events.push(AgentEvent::Interrupted);
        if self.mode.is_cloud() {
            self.fall_back(now, FallbackReason::Interrupt, link);
        }
        self.push_event_record(now, INTERRUPT_OBSERVABLE, 1.0, "event");
    }

    /// Ends the trip: stationary snapshots, then a final upload attempt.
    /// Unsent records stay buffered for the next trip.
    pub fn key_off(
        &mut self,
        now: Timestamp,
        model: &mut dyn FunctionModel,
        link: &mut dyn CloudLink,
    ) {
        if self.trip.is_none() {
            return;
        }
        self.sample_dynamic(now, model);
        let stationary: Vec<ObservableSpec> = self
            .spec
            .observables
            .iter()
            .filter(|o| o.kind == ObservableKind::Stationary)
            .cloned()
            .collect();
        for obs in &stationary {
            let value = model.sample(obs, &self.effective, now);
            self.push_record(now, &obs.name, value, &obs.unit, ObservableKind::Stationary);
        }
        self.close_trip();
        if let Some(token) = self.session_token.take() {
            link.close_session(&token, now);
        }
        self.mode = Mode::Off;
        self.next_poll = None;
        self.next_flush = Some(now);
        self.flush_due(now, link);
    }

    /// Uploads buffered records in batches if an upload is due.
    pub fn flush_due(&mut self, now: Timestamp, link: &mut dyn CloudLink) {
        if self.next_flush.is_none_or(|t| t > now) {
            return;
        }
        self.flush(now, link);
    }

    /// Attempts to upload the whole buffer.
    pub fn flush(&mut self, now: Timestamp, link: &mut dyn CloudLink) {
        let Some(credential) = self
            .device_token
            .clone()
            .or_else(|| self.session_token.clone())
        else {
            self.schedule_retry(now);
            return;
        };
        let mut sent = 0;
        let mut rejected = 0;
        while !self.buffer.is_empty() {
            let n = self.buffer.len().min(self.config.max_batch.max(1));
            let batch: Vec<TelemetryRecord> = self.buffer.range(..n).cloned().collect();
            match link.upload(&credential, &batch, now) {
                Ok(ack) => {
                    self.buffer.drain(..n);
                    sent += n;
                    rejected += ack.rejected;
                    self.counters.acknowledged += ack.accepted as u64;
                    self.counters.rejected += ack.rejected as u64;
                }
                Err(_) => {
                    if sent > 0 {
                        self.events.push(AgentEvent::Flushed {
                            records: sent,
                            rejected,
                        });
                    }
                    self.schedule_retry(now);
                    return;
                }
            }
        }
        if sent > 0 {
            self.events.push(AgentEvent::Flushed {
                records: sent,
                rejected,
            });
        }
        self.flush_failures = 0;
        self.next_flush = Some(now + seconds(self.config.flush_interval_s));
    }

    fn schedule_retry(&mut self, now: Timestamp) {
        let delay = (self.config.backoff_base_s * 2f64.powi(self.flush_failures as i32))
            .min(self.config.backoff_cap_s);
        self.flush_failures = self.flush_failures.saturating_add(1);
        self.events
            .push(AgentEvent::FlushFailed { retry_in_s: delay });
        self.next_flush = Some(now + seconds(delay));
    }

    fn enter_cloud(&mut self, indicator: StatusIndicator) {
        self.effective = resolve_parameters(&self.spec, Some(&indicator));
        self.mode = match self.spec.mode {
            FunctionMode::TimeCritical => Mode::SwitchMode(indicator),
            FunctionMode::CloudTuned => Mode::CloudMode(indicator),
        };
    }

    fn enter_local(&mut self) {
        self.effective = resolve_parameters(&self.spec, None);
        self.mode = Mode::LocalMode;
        self.next_poll = None;
    }

    /// Drops to local parameters and, mid-trip, starts a new `Local` segment.
    fn fall_back(&mut self, now: Timestamp, reason: FallbackReason, link: &mut dyn CloudLink) {
        self.events.push(AgentEvent::Local { reason });
        if let Some(token) = self.session_token.take() {
            if reason == FallbackReason::Interrupt {
                link.close_session(&token, now);
            }
        }
        let was_labelled = self
            .trip
            .as_ref()
            .is_some_and(|t| !t.variant_locked.is_local());
        self.enter_local();
        if was_labelled {
            let schedule = self.trip.as_ref().map(|t| t.next_sample.clone());
            self.close_trip();
            self.open_trip(now);
            if let (Some(trip), Some(schedule)) = (self.trip.as_mut(), schedule) {
                trip.next_sample = schedule;
            }
        }
    }

    /// The current switch position in time-critical mode.
    pub fn switch_position(&self) -> Option<SwitchPosition> {
        match &self.mode {
            Mode::SwitchMode(StatusIndicator {
                payload: IndicatorPayload::SwitchPosition(p),
                ..
            }) => Some(*p),
            _ => None,
        }
    }

    fn open_trip(&mut self, now: Timestamp) {
        self.trip_counter += 1;
        let (variant, experiment_id, epoch) = match self.mode.indicator() {
            Some(ind) => (
                VariantTag::Variant(Name::from(ind.variant_id.as_str())),
                Some(Name::from(ind.experiment_id.as_str())),
                Some(ind.epoch),
            ),
            None => (VariantTag::Local, None, None),
        };
        let trip_id: Name = format!("{}-{:06}", self.vin, self.trip_counter).into();
        self.events.push(AgentEvent::TripOpened {
            trip_id: trip_id.to_string(),
            variant: variant.to_string(),
        });
        let next_sample = self
            .spec
            .observables
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.sampling_period.map(|p| (i, now + seconds(p))))
            .collect();
        self.trip = Some(TripContext {
            trip_id,
            started_at: now,
            odometer_start: self.odometer,
            variant_locked: variant,
            experiment_id,
            epoch,
            sequence_counter: 0,
            next_sample,
        });
    }

    fn close_trip(&mut self) {
        if let Some(trip) = self.trip.take() {
            self.events.push(AgentEvent::TripClosed {
                trip_id: trip.trip_id.to_string(),
            });
        }
    }

    fn sample_dynamic(&mut self, now: Timestamp, model: &mut dyn FunctionModel) {
        let spec = Arc::clone(&self.spec);
        loop {
            // Emit due samples in time order across observables.
            let Some(trip) = self.trip.as_ref() else {
                return;
            };
            let next = trip
                .next_sample
                .iter()
                .enumerate()
                .filter(|(_, (_, t))| *t <= now)
                .min_by_key(|(_, (i, t))| (*t, *i));
            let Some((slot, &(i, at))) = next else { return };
            let obs = &spec.observables[i];
            let period = obs
                .sampling_period
                .expect("only dynamic observables are scheduled");
            if let Some(trip) = self.trip.as_mut() {
                trip.next_sample[slot].1 = at + seconds(period);
            }
            let value = model.sample(obs, &self.effective, at);
            self.push_record(at, &obs.name, value, &obs.unit, ObservableKind::Dynamic);
        }
    }

    fn push_event_record(&mut self, now: Timestamp, observable: &str, value: f64, unit: &str) {
        self.push_record(now, observable, value, unit, ObservableKind::Stationary);
    }

    fn push_record(
        &mut self,
        at: Timestamp,
        observable: &str,
        value: f64,
        unit: &str,
        kind: ObservableKind,
    ) {
        let Some(trip) = self.trip.as_mut() else {
            return;
        };
        let record = TelemetryRecord {
            vin: self.vin.clone(),
            trip_id: trip.trip_id.clone(),
            sequence_number: trip.sequence_counter,
            timestamp: at,
            observable: observable.into(),
            value,
            unit: unit.into(),
            variant: trip.variant_locked.clone(),
            experiment_id: trip.experiment_id.clone(),
            epoch: trip.epoch,
            kind,
        };
        trip.sequence_counter += 1;
        self.counters.generated += 1;
        if self.buffer.len() >= self.config.buffer_capacity {
            let dropped = self.evict();
            self.counters.dropped += dropped as u64;
            self.events.push(AgentEvent::Dropped { records: dropped });
            self.buffer.push_back(record);
            if observable != DROPPED_OBSERVABLE {
                self.push_record(
                    at,
                    DROPPED_OBSERVABLE,
                    dropped as f64,
                    "records",
                    ObservableKind::Stationary,
                );
            }
        } else {
            self.buffer.push_back(record);
        }
    }

    /// Evicts the oldest trip's records, or only the oldest record when the
    /// buffer holds nothing but the current trip.
    fn evict(&mut self) -> usize {
        let Some(front) = self.buffer.front() else {
            return 0;
        };
        let oldest = front.trip_id.clone();
        let current = self.trip.as_ref().map(|t| t.trip_id.clone());
        if current.as_ref() == Some(&oldest) {
            self.buffer.pop_front();
            return 1;
        }
        let n = self
            .buffer
            .iter()
            .take_while(|r| r.trip_id == oldest)
            .count();
        self.buffer.drain(..n);
        n
    }
}
