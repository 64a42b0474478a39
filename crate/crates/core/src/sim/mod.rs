//! Deterministic discrete-event fleet simulation.
//!
//! One logical clock drives every vehicle. Events are ordered by time and
//! then by insertion, and every random draw comes from a per-vehicle ChaCha
//! stream derived from the scenario seed, so a scenario and seed fully
//! determine the event log.

pub mod bundle;
pub mod fleet;
pub mod log;
pub mod network;
pub mod response;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::Path;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, VehicleAgent};
use crate::analysis::MetricDefinition;
use crate::model::{
    EligibilityPredicate, Experiment, ExperimentState, FunctionMode, FunctionSpec,
    IndicatorPayload, LifecycleEvent, ModelError, ParamValue, ParameterSet, StatusIndicator,
    Timestamp, Variant,
};
use crate::service::{CloudService, ServiceConfig, ServiceError};

pub use bundle::{default_function, default_response, DEFAULT_FUNCTION, PRIMARY_OBSERVABLE};
pub use fleet::{generate_vins, make_vin, MODEL_CODES};
pub use log::{EventLog, SimEvent};
pub use network::{Backend, FaultWindow, Latency, NetworkModel, NetworkStats, UploadBlackhole};
pub use response::{
    InjectedEffect, ObservableResponse, ResponseModel, Sensitivity, SensitivityMode,
    VehicleResponse,
};

pub const DEFAULT_EXPERIMENT: &str = "energy-soc-target";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("fleet_size must be at least 1")]
    EmptyFleet,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("remote service: {0}")]
    Remote(String),
}

impl SimError {
    pub fn code(&self) -> &'static str {
        match self {
            SimError::EmptyFleet => "EmptyFleet",
            SimError::InvalidScenario(_) => "InvalidScenario",
            SimError::Model(e) => e.code(),
            SimError::Service(e) => e.code(),
            SimError::Remote(_) => "Remote",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripDistance {
    pub median_km: f64,
    pub sigma: f64,
}

impl Default for TripDistance {
    fn default() -> Self {
        // Mean trip 24.2 km = 18 000 km / 50 vehicles / 7 days / (0.85 * 2.5),
        // so the median is 24.2 / exp(sigma^2 / 2).
        TripDistance {
            median_km: 20.2,
            sigma: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedProfile {
    pub mean_kmh: f64,
    pub sd_kmh: f64,
    pub min_kmh: f64,
    pub max_kmh: f64,
}

impl Default for SpeedProfile {
    fn default() -> Self {
        SpeedProfile {
            mean_kmh: 45.0,
            sd_kmh: 8.0,
            min_kmh: 15.0,
            max_kmh: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptOut {
    /// Chance per vehicle and driving day that the driver switches
    /// experiments off during one of the day's trips.
    pub daily_interrupt_probability: f64,
    /// Chance at each key-on that an opted-out driver switches them back on.
    pub clear_probability: f64,
}

impl Default for OptOut {
    fn default() -> Self {
        OptOut {
            daily_interrupt_probability: 0.01,
            clear_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum SteeringCommand {
    Activate,
    Pause,
    Resume,
    Conclude,
    Repartition,
    Adjust {
        variant_id: String,
        overrides: ParameterSet,
    },
}

impl SteeringCommand {
    fn name(&self) -> &'static str {
        match self {
            SteeringCommand::Activate => "activate",
            SteeringCommand::Pause => "pause",
            SteeringCommand::Resume => "resume",
            SteeringCommand::Conclude => "conclude",
            SteeringCommand::Repartition => "repartition",
            SteeringCommand::Adjust { .. } => "adjust",
        }
    }
}

/// An operator action at `at_s` seconds after scenario start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringAction {
    pub at_s: f64,
    pub experiment_id: String,
    #[serde(flatten)]
    pub command: SteeringCommand,
}

/// Everything a run depends on. Every field has a default, so a scenario
/// file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub fleet_size: usize,
    pub seed: u64,
    pub sim_days: u32,
    pub start: Timestamp,
    pub daily_drive_probability: f64,
    /// Mean trips on a driving day; at least one trip, the rest Poisson.
    pub trips_per_driving_day: f64,
    pub trip_distance: TripDistance,
    pub speed: SpeedProfile,
    /// Longest gap between agent steps while driving.
    pub tick_s: f64,
    pub opt_out: OptOut,
    pub agent: AgentConfig,
    pub network: NetworkModel,
    pub function: FunctionSpec,
    pub ground_truth: ResponseModel,
    /// Created and activated at scenario start.
    pub experiment: Option<Experiment>,
    pub steering: Vec<SteeringAction>,
}

impl Default for Scenario {
    fn default() -> Self {
        let function = default_function();
        let experiment = default_experiment(&function);
        Scenario {
            name: "default".into(),
            fleet_size: 50,
            seed: 1,
            sim_days: 28,
            start: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            daily_drive_probability: 0.85,
            trips_per_driving_day: 2.5,
            trip_distance: TripDistance::default(),
            speed: SpeedProfile::default(),
            tick_s: 60.0,
            opt_out: OptOut::default(),
            agent: AgentConfig::default(),
            network: NetworkModel::default(),
            function,
            ground_truth: default_response(),
            experiment: Some(experiment),
            steering: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidScenario(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn check(&self) -> Result<(), SimError> {
        if self.fleet_size == 0 {
            return Err(SimError::EmptyFleet);
        }
        let bad = |m: &str| Err(SimError::InvalidScenario(m.into()));
        let probs = [
            self.daily_drive_probability,
            self.opt_out.daily_interrupt_probability,
            self.opt_out.clear_probability,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(self.trips_per_driving_day >= 1.0 && self.trips_per_driving_day.is_finite()) {
            return bad("trips_per_driving_day must be at least 1");
        }
        if !(self.trip_distance.median_km > 0.0 && self.trip_distance.sigma >= 0.0) {
            return bad("trip_distance needs a positive median and non-negative sigma");
        }
        let s = &self.speed;
        if !(s.min_kmh > 0.0 && s.min_kmh <= s.max_kmh && s.sd_kmh >= 0.0) {
            return bad("speed profile needs 0 < min_kmh <= max_kmh");
        }
        if !(self.tick_s > 0.0) {
            return bad("tick_s must be positive");
        }
        self.network.check().map_err(SimError::InvalidScenario)?;
        self.ground_truth.check_against(&self.function)?;
        Ok(())
    }
}

/// The stock experiment on [`default_function`]: raise `soc_target` from 0.6
/// to 0.7 for half the fleet.
pub fn default_experiment(function: &FunctionSpec) -> Experiment {
    let overrides = ParameterSet::checked([("soc_target", ParamValue::Real(0.7))], function)
        .expect("soc_target is declared");
    Experiment {
        experiment_id: DEFAULT_EXPERIMENT.into(),
        function_id: function.function_id.clone(),
        layer_id: "energy".into(),
        eligibility: EligibilityPredicate::model_codes(MODEL_CODES.iter().copied()),
        variants: vec![
            Variant::control("control"),
            Variant::treatment("treatment", overrides),
        ],
        allocation: vec![0.5, 0.5],
        epoch: 0,
        salt: DEFAULT_EXPERIMENT.into(),
        state: ExperimentState::Draft,
        created_at: None,
        activated_at: None,
        paused_at: None,
        concluded_at: None,
        metrics: vec![MetricDefinition::mean_of(PRIMARY_OBSERVABLE)],
    }
}

/// Returns a scenario whose ground truth multiplies `observable` by
/// `multiplier` whenever a vehicle runs one of `experiment`'s treatment sets.
pub fn inject_effect(
    scenario: &Scenario,
    experiment: &Experiment,
    observable: &str,
    multiplier: f64,
) -> Result<Scenario, SimError> {
    if scenario.function.observable(observable).is_none() {
        return Err(SimError::InvalidScenario(format!(
            "unknown observable {observable:?}"
        )));
    }
    if !(multiplier.is_finite() && multiplier > 0.0) {
        return Err(SimError::InvalidScenario(
            "multiplier must be positive".into(),
        ));
    }
    let mut out = scenario.clone();
    for variant in experiment.variants.iter().filter(|v| !v.is_control()) {
        let payload = match scenario.function.mode {
            FunctionMode::CloudTuned => {
                IndicatorPayload::CloudOverrides(variant.cloud_overrides.clone())
            }
            FunctionMode::TimeCritical => {
                IndicatorPayload::SwitchPosition(variant.effective_switch())
            }
        };
        let indicator = StatusIndicator {
            experiment_id: experiment.experiment_id.clone(),
            epoch: experiment.epoch,
            variant_id: variant.variant_id.clone(),
            payload,
            issued_at: scenario.start,
            session_token: String::new(),
            refresh_period: None,
        };
        out.ground_truth.effects.push(InjectedEffect {
            observable: observable.into(),
            multiplier,
            when: crate::model::resolve_parameters(&scenario.function, Some(&indicator)),
        });
    }
    Ok(out)
}

/// One agent per vehicle, with VINs drawn from the scenario seed.
pub fn generate_fleet(scenario: &Scenario) -> Result<Vec<VehicleAgent>, SimError> {
    if scenario.fleet_size == 0 {
        return Err(SimError::EmptyFleet);
    }
    let spec = Arc::new(scenario.function.clone());
    Ok(generate_vins(scenario.fleet_size, scenario.seed)
        .into_iter()
        .map(|vin| VehicleAgent::new(vin, Arc::clone(&spec), scenario.agent.clone()))
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub vehicles: usize,
    pub days: u32,
    pub trips: u64,
    pub total_distance_km: f64,
    /// Distance per started week, by trip start.
    pub weekly_distance_km: Vec<f64>,
    /// Total distance scaled to seven days.
    pub mean_weekly_distance_km: f64,
    /// Share of the fleet with at least one trip, per day.
    pub daily_driven_fraction: Vec<f64>,
    pub mean_daily_driven_fraction: f64,
    pub generated: u64,
    pub acknowledged: u64,
    /// Records in the store after the run; in-process runs only.
    pub stored: Option<u64>,
    pub buffered: u64,
    pub dropped: u64,
    pub rejected: u64,
    pub interrupts_injected: u64,
    pub network: NetworkStats,
}

pub struct SimOutcome {
    pub log: EventLog,
    pub stats: RunStats,
    /// The in-process service, when the run used one.
    pub service: Option<Arc<CloudService>>,
    /// Final state of every agent, in fleet order.
    pub agents: Vec<VehicleAgent>,
}

/// Runs `scenario` against a fresh in-process service.
pub fn run(scenario: &Scenario) -> Result<SimOutcome, SimError> {
    let service = Arc::new(CloudService::new(ServiceConfig::default()));
    run_with(scenario, Backend::Local(service))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    DayStart(u32),
    KeyOn { vehicle: usize, trip: usize },
    Wake(usize),
    KeyOff(usize),
    Interrupt(usize),
    Steer(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Slot {
    t_ms: i64,
    seq: u64,
}

struct Queue {
    heap: BinaryHeap<Reverse<(Slot, usize)>>,
    actions: Vec<Action>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, t_ms: i64, action: Action) {
        let idx = self.actions.len();
        self.actions.push(action);
        self.heap.push(Reverse((
            Slot {
                t_ms,
                seq: self.seq,
            },
            idx,
        )));
        self.seq += 1;
    }

    fn pop(&mut self) -> Option<(i64, Action)> {
        self.heap
            .pop()
            .map(|Reverse((slot, idx))| (slot.t_ms, self.actions[idx]))
    }
}

#[derive(Debug, Clone, Copy)]
struct PlannedTrip {
    start_ms: i64,
    end_ms: i64,
    distance_km: f64,
    speed_kmh: f64,
    day: u32,
}

struct Vehicle {
    agent: VehicleAgent,
    response: VehicleResponse,
    behaviour: ChaCha8Rng,
    net_rng: ChaCha8Rng,
    plan: Vec<PlannedTrip>,
    busy_until_ms: i64,
    driving: Option<(usize, i64)>,
    last_driven_day: Option<u32>,
}

const MS_PER_DAY: i64 = 86_400_000;
const DAY_WINDOW_MS: (i64, i64) = (6 * 3_600_000, 22 * 3_600_000);
const MIN_GAP_MS: i64 = 5 * 60_000;

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Sim<'a> {
    scenario: &'a Scenario,
    backend: Backend,
    vehicles: Vec<Vehicle>,
    queue: Queue,
    log: EventLog,
    stats: RunStats,
    net: NetworkStats,
    end_ms: i64,
    distance: LogNormal<f64>,
    speed: Normal<f64>,
    extra_trips: Option<Poisson<f64>>,
}

impl Sim<'_> {
    fn at(&self, t_ms: i64) -> Timestamp {
        self.scenario.start + chrono::TimeDelta::milliseconds(t_ms)
    }

    fn drain_agent_events(&mut self, t_ms: i64, v: usize) {
        let vehicle = &mut self.vehicles[v];
        for e in vehicle.agent.take_events() {
            self.log.agent(t_ms, vehicle.agent.vin(), &e);
        }
    }

    fn plan_day(&mut self, day: u32) {
        let mut driving = 0;
        let day_ms = i64::from(day) * MS_PER_DAY;
        for v in 0..self.vehicles.len() {
            let (extra, distance, speed) = (self.extra_trips, self.distance, self.speed);
            let smin = self.scenario.speed.min_kmh;
            let smax = self.scenario.speed.max_kmh;
            let p_drive = self.scenario.daily_drive_probability;
            let p_interrupt = self.scenario.opt_out.daily_interrupt_probability;
            let vehicle = &mut self.vehicles[v];
            let rng = &mut vehicle.behaviour;
            if rng.random::<f64>() >= p_drive {
                continue;
            }
            let n = 1 + extra.map_or(0, |d| d.sample(rng) as usize);
            let mut starts: Vec<i64> = (0..n)
                .map(|_| day_ms + rng.random_range(DAY_WINDOW_MS.0..DAY_WINDOW_MS.1))
                .collect();
            starts.sort_unstable();
            let mut today = Vec::new();
            for s in starts {
                let distance_km = distance.sample(rng);
                let speed_kmh = speed.sample(rng).clamp(smin, smax);
                let start_ms = s.max(vehicle.busy_until_ms + MIN_GAP_MS);
                let end_ms =
                    start_ms + (distance_km / speed_kmh * 3_600_000.0).round().max(1.0) as i64;
                if end_ms > self.end_ms {
                    continue;
                }
                vehicle.busy_until_ms = end_ms;
                today.push(vehicle.plan.len());
                vehicle.plan.push(PlannedTrip {
                    start_ms,
                    end_ms,
                    distance_km,
                    speed_kmh,
                    day,
                });
            }
            let interrupt = rng.random::<f64>() < p_interrupt;
            let pick = rng.random_range(0..today.len().max(1));
            let frac = rng.random_range(0.05..0.95);
            if today.is_empty() {
                continue;
            }
            driving += 1;
            for &trip in &today {
                let start = vehicle.plan[trip].start_ms;
                self.queue.push(start, Action::KeyOn { vehicle: v, trip });
            }
            if interrupt {
                let t = vehicle.plan[today[pick]];
                let at = t.start_ms + ((t.end_ms - t.start_ms) as f64 * frac) as i64;
                self.queue.push(at, Action::Interrupt(v));
            }
        }
        self.log
            .sim(day_ms, None, &SimEvent::DayStart { day, driving });
    }

    fn link_call<R>(
        &mut self,
        v: usize,
        f: impl FnOnce(&mut VehicleAgent, &mut VehicleResponse, &mut network::SimLink<'_>) -> R,
    ) -> R {
        let vehicle = &mut self.vehicles[v];
        let mut link = network::SimLink {
            backend: &self.backend,
            model: &self.scenario.network,
            rng: &mut vehicle.net_rng,
            stats: &mut self.net,
            vehicle: v,
            t0: self.scenario.start,
        };
        f(&mut vehicle.agent, &mut vehicle.response, &mut link)
    }

    /// Moves the odometer to `t_ms` for a driving vehicle.
    fn advance_distance(&mut self, v: usize, t_ms: i64) {
        let vehicle = &mut self.vehicles[v];
        if let Some((trip, last)) = vehicle.driving {
            let t = vehicle.plan[trip];
            let until = t_ms.min(t.end_ms);
            if until > last {
                vehicle
                    .agent
                    .add_distance(t.speed_kmh * (until - last) as f64 / 3_600_000.0);
                vehicle.driving = Some((trip, until));
            }
        }
    }

    fn schedule_wake(&mut self, v: usize, t_ms: i64) {
        let Some((trip, _)) = self.vehicles[v].driving else {
            return;
        };
        let end = self.vehicles[v].plan[trip].end_ms;
        let mut next = t_ms + (self.scenario.tick_s * 1000.0).round().max(1.0) as i64;
        if let Some(w) = self.vehicles[v].agent.next_wakeup() {
            let w_ms = (w - self.scenario.start).num_milliseconds();
            if w_ms > t_ms {
                next = next.min(w_ms);
            }
        }
        if next >= end {
            self.queue.push(end, Action::KeyOff(v));
        } else {
            self.queue.push(next, Action::Wake(v));
        }
    }

    fn key_on(&mut self, t_ms: i64, v: usize, trip: usize) {
        let now = self.at(t_ms);
        let clear_p = self.scenario.opt_out.clear_probability;
        let vehicle = &mut self.vehicles[v];
        let clear = vehicle.behaviour.random::<f64>() < clear_p;
        let planned = vehicle.plan[trip];
        vehicle.driving = Some((trip, t_ms));
        if vehicle.last_driven_day != Some(planned.day) {
            vehicle.last_driven_day = Some(planned.day);
            self.stats.daily_driven_fraction[planned.day as usize] += 1.0;
        }
        let vin = vehicle.agent.vin().clone();
        self.log.sim(
            t_ms,
            Some(&vin),
            &SimEvent::KeyOn {
                distance_km: planned.distance_km,
            },
        );
        self.link_call(v, |agent, _, link| agent.key_on(now, clear, link));
        self.drain_agent_events(t_ms, v);
        self.schedule_wake(v, t_ms);
    }

    fn wake(&mut self, t_ms: i64, v: usize) {
        if self.vehicles[v].driving.is_none() {
            return;
        }
        self.advance_distance(v, t_ms);
        let now = self.at(t_ms);
        self.link_call(v, |agent, model, link| agent.step(now, model, link));
        self.drain_agent_events(t_ms, v);
        self.schedule_wake(v, t_ms);
    }

    fn key_off(&mut self, t_ms: i64, v: usize) {
        let Some((trip, _)) = self.vehicles[v].driving else {
            return;
        };
        self.advance_distance(v, t_ms);
        let now = self.at(t_ms);
        self.link_call(v, |agent, model, link| agent.key_off(now, model, link));
        let vehicle = &mut self.vehicles[v];
        vehicle.driving = None;
        let planned = vehicle.plan[trip];
        let odometer_km = vehicle.agent.odometer();
        let vin = vehicle.agent.vin().clone();
        self.stats.trips += 1;
        self.stats.total_distance_km += planned.distance_km;
        self.stats.weekly_distance_km[(planned.day / 7) as usize] += planned.distance_km;
        self.drain_agent_events(t_ms, v);
        self.log.sim(
            t_ms,
            Some(&vin),
            &SimEvent::KeyOff {
                distance_km: planned.distance_km,
                odometer_km,
            },
        );
    }

    fn interrupt(&mut self, t_ms: i64, v: usize) {
        if self.vehicles[v].driving.is_none() {
            return;
        }
        self.advance_distance(v, t_ms);
        let now = self.at(t_ms);
        let vin = self.vehicles[v].agent.vin().clone();
        self.stats.interrupts_injected += 1;
        self.log.sim(t_ms, Some(&vin), &SimEvent::InterruptInjected);
        self.link_call(v, |agent, model, link| {
            // Catch dynamic samples up to the interrupt under the old mode.
            agent.step(now, model, link);
            agent.user_interrupt(now, link);
        });
        self.drain_agent_events(t_ms, v);
    }

    fn steer(&mut self, t_ms: i64, idx: usize) {
        let action = self.scenario.steering[idx].clone();
        let now = self.at(t_ms);
        let id = action.experiment_id.as_str();
        let result: Result<(), String> = match &self.backend {
            Backend::Local(s) => match &action.command {
                SteeringCommand::Activate => {
                    s.transition(id, LifecycleEvent::Activate, now).map(drop)
                }
                SteeringCommand::Pause => s.transition(id, LifecycleEvent::Pause, now).map(drop),
                SteeringCommand::Resume => s.transition(id, LifecycleEvent::Resume, now).map(drop),
                SteeringCommand::Conclude => {
                    s.transition(id, LifecycleEvent::Conclude, now).map(drop)
                }
                SteeringCommand::Repartition => s.repartition(id, now).map(drop),
                SteeringCommand::Adjust {
                    variant_id,
                    overrides,
                } => s
                    .steer_adjust(id, variant_id, overrides.clone(), now)
                    .map(drop),
            }
            .map_err(|e| format!("{}: {e}", e.code())),
            Backend::Remote(c) => match &action.command {
                SteeringCommand::Activate => c.transition(id, LifecycleEvent::Activate).map(drop),
                SteeringCommand::Pause => c.transition(id, LifecycleEvent::Pause).map(drop),
                SteeringCommand::Resume => c.transition(id, LifecycleEvent::Resume).map(drop),
                SteeringCommand::Conclude => c.transition(id, LifecycleEvent::Conclude).map(drop),
                SteeringCommand::Repartition => c.repartition(id).map(drop),
                SteeringCommand::Adjust {
                    variant_id,
                    overrides,
                } => c.adjust(id, variant_id, overrides).map(drop),
            }
            .map_err(|e| e.to_string()),
        };
        if let Err(e) = &result {
            tracing::warn!(
                experiment = id,
                action = action.command.name(),
                "steering failed: {e}"
            );
        }
        self.log.sim(
            t_ms,
            None,
            &SimEvent::Steering {
                experiment_id: action.experiment_id.clone(),
                action: action.command.name().into(),
                error: result.err(),
            },
        );
    }
}

/// Registers the function and starts the scenario's experiment on `backend`.
fn prepare(scenario: &Scenario, backend: &Backend) -> Result<(), SimError> {
    let now = scenario.start;
    match backend {
        Backend::Local(service) => {
            if service.function(&scenario.function.function_id).is_none() {
                service.register_function(scenario.function.clone())?;
            }
            if let Some(exp) = &scenario.experiment {
                if service.experiment(&exp.experiment_id).is_err() {
                    service.create_experiment(exp.clone(), now)?;
                    service.transition(&exp.experiment_id, LifecycleEvent::Activate, now)?;
                }
            }
        }
        Backend::Remote(client) => {
            let remote = |e: crate::client::ClientError| SimError::Remote(e.to_string());
            let functions = client.functions().map_err(remote)?;
            if !functions
                .iter()
                .any(|f| f.function_id == scenario.function.function_id)
            {
                client
                    .register_function(&scenario.function)
                    .map_err(remote)?;
            }
            if let Some(exp) = &scenario.experiment {
                if client.experiment(&exp.experiment_id).is_err() {
                    client.create_experiment(exp).map_err(remote)?;
                    client
                        .transition(&exp.experiment_id, LifecycleEvent::Activate)
                        .map_err(remote)?;
                }
            }
        }
    }
    Ok(())
}

/// Runs `scenario` with vehicles talking to `backend`.
pub fn run_with(scenario: &Scenario, backend: Backend) -> Result<SimOutcome, SimError> {
    scenario.check()?;
    prepare(scenario, &backend)?;
    let response = Arc::new(scenario.ground_truth.clone());
    let agents = generate_fleet(scenario)?;
    let mut vehicles = Vec::with_capacity(agents.len());
    for (i, agent) in agents.into_iter().enumerate() {
        let token = backend.enroll(agent.vin()).map_err(SimError::Remote)?;
        let base = i as u64 * 4;
        vehicles.push(Vehicle {
            agent: agent.with_device_token(token),
            response: VehicleResponse::new(
                Arc::clone(&response),
                &scenario.function,
                stream(scenario.seed, base + 1),
            ),
            behaviour: stream(scenario.seed, base),
            net_rng: stream(scenario.seed, base + 2),
            plan: Vec::new(),
            busy_until_ms: i64::MIN / 2,
            driving: None,
            last_driven_day: None,
        });
    }

    let days = scenario.sim_days;
    let extra = scenario.trips_per_driving_day - 1.0;
    let mut sim = Sim {
        scenario,
        backend,
        vehicles,
        queue: Queue {
            heap: BinaryHeap::new(),
            actions: Vec::new(),
            seq: 0,
        },
        log: EventLog::new(),
        stats: RunStats {
            vehicles: scenario.fleet_size,
            days,
            weekly_distance_km: vec![0.0; days.div_ceil(7) as usize],
            daily_driven_fraction: vec![0.0; days as usize],
            ..Default::default()
        },
        net: NetworkStats::default(),
        end_ms: i64::from(days) * MS_PER_DAY,
        distance: LogNormal::new(
            scenario.trip_distance.median_km.ln(),
            scenario.trip_distance.sigma,
        )
        .map_err(|e| SimError::InvalidScenario(e.to_string()))?,
        speed: Normal::new(scenario.speed.mean_kmh, scenario.speed.sd_kmh)
            .map_err(|e| SimError::InvalidScenario(e.to_string()))?,
        extra_trips: if extra > 0.0 {
            Some(Poisson::new(extra).map_err(|e| SimError::InvalidScenario(e.to_string()))?)
        } else {
            None
        },
    };

    for (i, s) in scenario.steering.iter().enumerate() {
        sim.queue
            .push((s.at_s * 1000.0).round() as i64, Action::Steer(i));
    }
    for d in 0..days {
        sim.queue
            .push(i64::from(d) * MS_PER_DAY, Action::DayStart(d));
    }
    while let Some((t_ms, action)) = sim.queue.pop() {
        if t_ms > sim.end_ms {
            break;
        }
        match action {
            Action::DayStart(d) => sim.plan_day(d),
            Action::KeyOn { vehicle, trip } => sim.key_on(t_ms, vehicle, trip),
            Action::Wake(v) => sim.wake(t_ms, v),
            Action::KeyOff(v) => sim.key_off(t_ms, v),
            Action::Interrupt(v) => sim.interrupt(t_ms, v),
            Action::Steer(i) => sim.steer(t_ms, i),
        }
    }

    // Parked vehicles deliver what they still hold once at the end.
    let end = sim.end_ms;
    let end_at = sim.at(end);
    for v in 0..sim.vehicles.len() {
        sim.link_call(v, |agent, _, link| {
            if agent.buffered() > 0 {
                agent.flush(end_at, link);
            }
        });
        sim.drain_agent_events(end, v);
    }

    let mut stats = sim.stats;
    let fleet = scenario.fleet_size as f64;
    stats
        .daily_driven_fraction
        .iter_mut()
        .for_each(|x| *x /= fleet);
    if days > 0 {
        stats.mean_daily_driven_fraction =
            stats.daily_driven_fraction.iter().sum::<f64>() / f64::from(days);
        stats.mean_weekly_distance_km = stats.total_distance_km * 7.0 / f64::from(days);
    }
    for vehicle in &sim.vehicles {
        let c = vehicle.agent.counters();
        stats.generated += c.generated;
        stats.acknowledged += c.acknowledged;
        stats.dropped += c.dropped;
        stats.rejected += c.rejected;
        stats.buffered += vehicle.agent.buffered() as u64;
    }
    stats.network = sim.net;
    let service = match &sim.backend {
        Backend::Local(s) => Some(Arc::clone(s)),
        Backend::Remote(_) => None,
    };
    stats.stored = service.as_ref().map(|s| s.store().len() as u64);
    let mut log = sim.log;
    log.sim(
        end,
        None,
        &SimEvent::Finished {
            generated: stats.generated,
            stored: stats.stored.unwrap_or(0),
            buffered: stats.buffered,
        },
    );
    Ok(SimOutcome {
        log,
        stats,
        service,
        agents: sim.vehicles.into_iter().map(|v| v.agent).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(days: u32) -> Scenario {
        Scenario {
            fleet_size: 6,
            sim_days: days,
            ..Scenario::default()
        }
    }

    #[test]
    fn empty_fleet_rejected() {
        let s = Scenario {
            fleet_size: 0,
            ..Scenario::default()
        };
        assert!(matches!(run(&s), Err(SimError::EmptyFleet)));
        assert!(matches!(generate_fleet(&s), Err(SimError::EmptyFleet)));
    }

    #[test]
    fn records_are_conserved() {
        let out = run(&small(3)).unwrap();
        let s = &out.stats;
        assert!(s.generated > 0);
        assert_eq!(
            s.generated,
            s.stored.unwrap() + s.buffered + s.dropped + s.rejected + s.network.blackholed
        );
    }

    #[test]
    fn scenario_json_defaults() {
        let s = Scenario::from_json(r#"{"fleet_size": 3, "seed": 7}"#).unwrap();
        assert_eq!(s.fleet_size, 3);
        assert_eq!(s.sim_days, 28);
        assert_eq!(s.function.observables.len(), 58);
        assert!(Scenario::from_json(r#"{"fleet_size": "x"}"#).is_err());
    }
}
