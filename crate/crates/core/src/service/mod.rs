//! The experiment cloud.
//!
//! Answers key-on handshakes with status indicators (or silence), serves
//! indicator refreshes, accepts telemetry uploads and exposes the steering
//! operations. Steering calls are serialized through the registry write lock;
//! handshakes, polls and ingestion only take read locks on the registry and
//! never wait on the store while holding it.

mod audit;
mod config;
pub mod http;

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, MetricDefinition, Report};
use crate::assignment::{self, fnv1a64};
use crate::model::{
    transition, validate_experiment, Experiment, ExperimentState, FunctionMode, FunctionSpec,
    IndicatorPayload, LifecycleEvent, ModelError, ParameterSet, Registry, StatusIndicator,
    TelemetryRecord, Timestamp, Vin,
};
use crate::store::{
    self, system_observables, ObservableRegistry, Query, RejectReason, StoreError, StoredRecord,
    TelemetryStore, Validation,
};

pub use audit::{replay, AuditAction, AuditEntry};
pub use config::ServiceConfig;

/// Number of audit entries included in a live snapshot.
pub const AUDIT_TAIL: usize = 20;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown experiment {0:?}")]
    UnknownExperiment(String),
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("experiment {0:?} already exists")]
    DuplicateExperiment(String),
    #[error("experiment {experiment_id:?} is {state:?}")]
    IllegalState {
        experiment_id: String,
        state: ExperimentState,
    },
    #[error("unknown session or device token")]
    UnknownSession,
    #[error("batch of {got} records exceeds the limit of {limit}")]
    BatchTooLarge { got: usize, limit: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("audit log: {0}")]
    Audit(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownExperiment(_) => "UnknownExperiment",
            ServiceError::UnknownVariant(_) => "UnknownVariant",
            ServiceError::DuplicateExperiment(_) => "DuplicateExperiment",
            ServiceError::IllegalState { .. } => "IllegalState",
            ServiceError::UnknownSession => "UnknownSession",
            ServiceError::BatchTooLarge { .. } => "BatchTooLarge",
            ServiceError::Model(e) => e.code(),
            ServiceError::Store(_) => "StoreError",
            ServiceError::Audit(_) => "AuditError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Open,
    Interrupted,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub vin: Vin,
    pub session_token: String,
    pub experiment_id: String,
    pub epoch: u32,
    pub variant_id: String,
    pub opened_at: Timestamp,
    pub last_seen: Timestamp,
    pub state: SessionState,
}

#[derive(Debug, Default)]
struct Sessions {
    by_token: HashMap<String, Session>,
    open_by_vin: HashMap<Vin, String>,
}

impl Sessions {
    fn close_open(&mut self, vin: &Vin, state: SessionState) {
        if let Some(token) = self.open_by_vin.remove(vin) {
            if let Some(s) = self.by_token.get_mut(&token) {
                s.state = state;
            }
        }
    }
}

#[derive(Debug, Default)]
struct Devices {
    by_token: HashMap<String, Vin>,
    by_vin: HashMap<Vin, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReceipt {
    /// Records that passed validation, including replays of stored keys.
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
    /// Accepted records whose key was new to the store.
    pub inserted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMean {
    pub variant_id: String,
    pub observable: String,
    pub mean: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveSnapshot {
    pub experiment_id: String,
    pub state: ExperimentState,
    pub epoch: u32,
    pub records_per_variant: BTreeMap<String, u64>,
    pub running_means: Vec<RunningMean>,
    pub open_sessions: usize,
    pub audit_tail: Vec<AuditEntry>,
}

#[derive(Debug, Default)]
struct AuditLog {
    entries: Vec<AuditEntry>,
    file: Option<File>,
}

impl AuditLog {
    fn append(
        &mut self,
        at: Timestamp,
        experiment_id: &str,
        action: AuditAction,
    ) -> Result<(), ServiceError> {
        let entry = AuditEntry {
            seq: self.entries.len() as u64,
            at,
            experiment_id: experiment_id.to_string(),
            action,
        };
        if let Some(file) = &mut self.file {
            let mut line =
                serde_json::to_vec(&entry).map_err(|e| ServiceError::Audit(e.to_string()))?;
            line.push(b'\n');
            file.write_all(&line).map_err(StoreError::from)?;
            file.sync_data().map_err(StoreError::from)?;
        }
        self.entries.push(entry);
        Ok(())
    }
}

const AUDIT_FILE: &str = "audit.ndjson";
const RELEASES_FILE: &str = "releases.ndjson";

pub struct CloudService {
    config: ServiceConfig,
    registry: RwLock<Registry>,
    audit: Mutex<AuditLog>,
    sessions: Mutex<Sessions>,
    devices: RwLock<Devices>,
    observables: RwLock<ObservableRegistry>,
    store: TelemetryStore,
    token_counter: AtomicU64,
    releases: Option<PathBuf>,
}

impl CloudService {
    /// A service with an in-memory store.
    pub fn new(config: ServiceConfig) -> Self {
        Self::with_store(config, TelemetryStore::in_memory())
    }

    fn with_store(config: ServiceConfig, store: TelemetryStore) -> Self {
        let mut observables = ObservableRegistry::new();
        for spec in system_observables() {
            observables
                .register(spec)
                .expect("system observables are distinct");
        }
        CloudService {
            config,
            registry: RwLock::new(Registry::new()),
            audit: Mutex::new(AuditLog::default()),
            sessions: Mutex::new(Sessions::default()),
            devices: RwLock::new(Devices::default()),
            observables: RwLock::new(observables),
            store,
            token_counter: AtomicU64::new(0),
            releases: None,
        }
    }

    /// A service persisting telemetry, releases and the audit log under `dir`.
    /// Existing state is replayed.
    pub fn open(config: ServiceConfig, dir: &Path) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir).map_err(StoreError::from)?;
        let mut service = Self::with_store(config, TelemetryStore::open(&dir.join("telemetry"))?);

        let releases = dir.join(RELEASES_FILE);
        for spec in read_ndjson::<FunctionSpec>(&releases)? {
            service.register_function(spec)?;
        }
        service.releases = Some(releases);

        let audit_path = dir.join(AUDIT_FILE);
        let entries = read_ndjson::<AuditEntry>(&audit_path)?;
        let experiments = replay(&entries)?;
        service.registry.get_mut().experiments = experiments;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&audit_path)
            .map_err(StoreError::from)?;
        *service.audit.get_mut() = AuditLog {
            entries,
            file: Some(file),
        };
        Ok(service)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn store(&self) -> &TelemetryStore {
        &self.store
    }

    /// Registers a function release, replacing any earlier spec with the same id.
    pub fn register_function(&self, spec: FunctionSpec) -> Result<(), ServiceError> {
        let spec = spec.validate()?;
        let mut registry = self.registry.write();
        let mut candidate = registry.clone();
        candidate.register_function(spec.clone())?;
        let mut observables = ObservableRegistry::new();
        for o in system_observables().into_iter().chain(
            candidate
                .functions
                .values()
                .flat_map(|f| f.observables.iter().cloned()),
        ) {
            observables.register(o)?;
        }
        if let Some(path) = &self.releases {
            append_ndjson(path, &spec)?;
        }
        *registry = candidate;
        *self.observables.write() = observables;
        Ok(())
    }

    pub fn function(&self, function_id: &str) -> Option<FunctionSpec> {
        self.registry.read().function(function_id).cloned()
    }

    pub fn functions(&self) -> Vec<FunctionSpec> {
        self.registry.read().functions.values().cloned().collect()
    }

    pub fn experiment(&self, experiment_id: &str) -> Result<Experiment, ServiceError> {
        self.registry
            .read()
            .experiments
            .get(experiment_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownExperiment(experiment_id.into()))
    }

    pub fn experiments(&self) -> Vec<Experiment> {
        self.registry.read().experiments.values().cloned().collect()
    }

    /// Stores a new experiment in `Draft`.
    pub fn create_experiment(
        &self,
        experiment: Experiment,
        now: Timestamp,
    ) -> Result<Experiment, ServiceError> {
        let mut registry = self.registry.write();
        if registry.experiments.contains_key(&experiment.experiment_id) {
            return Err(ServiceError::DuplicateExperiment(experiment.experiment_id));
        }
        let mut draft = experiment;
        draft.state = ExperimentState::Draft;
        draft.created_at = Some(now);
        draft.activated_at = None;
        draft.paused_at = None;
        draft.concluded_at = None;
        let draft = validate_experiment(draft, &registry)?;
        self.audit.lock().append(
            now,
            &draft.experiment_id,
            AuditAction::Created {
                experiment: Box::new(draft.clone()),
            },
        )?;
        registry
            .experiments
            .insert(draft.experiment_id.clone(), draft.clone());
        Ok(draft)
    }

    /// Applies a lifecycle event. Entering `Active` re-checks layer conflicts;
    /// concluding interrupts every open session of the experiment.
    pub fn transition(
        &self,
        experiment_id: &str,
        event: LifecycleEvent,
        now: Timestamp,
    ) -> Result<Experiment, ServiceError> {
        let mut registry = self.registry.write();
        let current = registry
            .experiments
            .get(experiment_id)
            .ok_or_else(|| ServiceError::UnknownExperiment(experiment_id.into()))?;
        let mut next = transition(current, event, now)?;
        if next.state == ExperimentState::Active {
            next = validate_experiment(next, &registry)?;
        }
        self.audit
            .lock()
            .append(now, experiment_id, AuditAction::Transitioned { event })?;
        registry
            .experiments
            .insert(experiment_id.into(), next.clone());
        if next.state == ExperimentState::Concluded {
            let mut sessions = self.sessions.lock();
            let vins: Vec<Vin> = sessions
                .by_token
                .values()
                .filter(|s| s.state == SessionState::Open && s.experiment_id == experiment_id)
                .map(|s| s.vin.clone())
                .collect();
            for vin in vins {
                sessions.close_open(&vin, SessionState::Interrupted);
            }
        }
        Ok(next)
    }

    /// Starts a new assignment epoch. Open sessions keep their epoch and
    /// variant until the vehicle's next key-on.
    pub fn repartition(
        &self,
        experiment_id: &str,
        now: Timestamp,
    ) -> Result<Experiment, ServiceError> {
        let mut registry = self.registry.write();
        let current = registry
            .experiments
            .get(experiment_id)
            .ok_or_else(|| ServiceError::UnknownExperiment(experiment_id.into()))?;
        let next = assignment::repartition(current)?;
        self.audit.lock().append(
            now,
            experiment_id,
            AuditAction::Repartitioned { epoch: next.epoch },
        )?;
        registry
            .experiments
            .insert(experiment_id.into(), next.clone());
        Ok(next)
    }

    /// Replaces a treatment's cloud overrides. Open sessions pick the new
    /// values up at their next poll.
    pub fn steer_adjust(
        &self,
        experiment_id: &str,
        variant_id: &str,
        overrides: ParameterSet,
        now: Timestamp,
    ) -> Result<Experiment, ServiceError> {
        let mut registry = self.registry.write();
        let current = registry
            .experiments
            .get(experiment_id)
            .ok_or_else(|| ServiceError::UnknownExperiment(experiment_id.into()))?;
        let Some(index) = current
            .variants
            .iter()
            .position(|v| v.variant_id == variant_id && !v.is_control())
        else {
            return Err(ServiceError::UnknownVariant(variant_id.into()));
        };
        if !current.is_running() {
            return Err(ServiceError::IllegalState {
                experiment_id: experiment_id.into(),
                state: current.state,
            });
        }
        let mut next = current.clone();
        next.variants[index].cloud_overrides = overrides;
        let next = validate_experiment(next, &registry)?;
        self.audit.lock().append(
            now,
            experiment_id,
            AuditAction::OverridesAdjusted {
                variant_id: variant_id.into(),
                overrides: next.variants[index].cloud_overrides.clone(),
            },
        )?;
        registry
            .experiments
            .insert(experiment_id.into(), next.clone());
        Ok(next)
    }

    pub fn audit(&self, experiment_id: Option<&str>) -> Vec<AuditEntry> {
        self.audit
            .lock()
            .entries
            .iter()
            .filter(|e| experiment_id.is_none_or(|id| e.experiment_id == id))
            .cloned()
            .collect()
    }

    /// Key-on handshake. `None` is silence: no Active experiment assigns the VIN.
    pub fn handshake(&self, vin: &Vin, now: Timestamp) -> Option<StatusIndicator> {
        let registry = self.registry.read();
        let mut matches = registry.active_experiments().filter_map(|e| {
            let a = assignment::assign(vin, e);
            a.variant_id.map(|v| (e, v))
        });
        let chosen = matches.next();
        let mut sessions = self.sessions.lock();
        sessions.close_open(vin, SessionState::Closed);
        let (experiment, variant_id) = chosen?;
        let others: Vec<&str> = matches.map(|(e, _)| e.experiment_id.as_str()).collect();
        if !others.is_empty() {
            tracing::warn!(
                vin = %vin,
                chosen = %experiment.experiment_id,
                others = ?others,
                "MultiMatch: VIN eligible for several active experiments"
            );
        }
        let spec = registry.function(&experiment.function_id)?;
        let n = self.token_counter.fetch_add(1, Ordering::Relaxed);
        let token = format!(
            "s-{:016x}",
            fnv1a64(format!("session:{vin}:{n}").as_bytes())
        );
        let indicator =
            self.indicator(experiment, spec, &variant_id, experiment.epoch, &token, now)?;
        sessions.open_by_vin.insert(vin.clone(), token.clone());
        sessions.by_token.insert(
            token.clone(),
            Session {
                vin: vin.clone(),
                session_token: token,
                experiment_id: experiment.experiment_id.clone(),
                epoch: experiment.epoch,
                variant_id,
                opened_at: now,
                last_seen: now,
                state: SessionState::Open,
            },
        );
        Some(indicator)
    }

    /// Indicator refresh for an open session: the session's variant with its
    /// current overrides, or silence once the session or experiment has ended.
    pub fn poll(&self, session_token: &str, now: Timestamp) -> Option<StatusIndicator> {
        let registry = self.registry.read();
        let mut sessions = self.sessions.lock();
        let session = sessions.by_token.get_mut(session_token)?;
        if session.state != SessionState::Open {
            return None;
        }
        session.last_seen = now;
        let experiment = registry.experiments.get(&session.experiment_id)?;
        if !experiment.is_running() {
            return None;
        }
        let spec = registry.function(&experiment.function_id)?;
        self.indicator(
            experiment,
            spec,
            &session.variant_id,
            session.epoch,
            session_token,
            now,
        )
    }

    fn indicator(
        &self,
        experiment: &Experiment,
        spec: &FunctionSpec,
        variant_id: &str,
        epoch: u32,
        token: &str,
        now: Timestamp,
    ) -> Option<StatusIndicator> {
        let variant = experiment.variant(variant_id)?;
        let payload = match spec.mode {
            FunctionMode::CloudTuned => {
                IndicatorPayload::CloudOverrides(variant.cloud_overrides.clone())
            }
            FunctionMode::TimeCritical => {
                IndicatorPayload::SwitchPosition(variant.effective_switch())
            }
        };
        let indicator = StatusIndicator {
            experiment_id: experiment.experiment_id.clone(),
            epoch,
            variant_id: variant_id.into(),
            payload,
            issued_at: now,
            session_token: token.into(),
            refresh_period: Some(self.config.poll_period_s),
        };
        // Never issue anything a vehicle would have to reject.
        indicator.validate_for(spec).ok().map(|_| indicator)
    }

    pub fn close_session(&self, session_token: &str) {
        let mut sessions = self.sessions.lock();
        let Some(session) = sessions.by_token.get(session_token) else {
            return;
        };
        if session.state == SessionState::Open {
            let vin = session.vin.clone();
            sessions.close_open(&vin, SessionState::Closed);
        }
    }

    pub fn session(&self, session_token: &str) -> Option<Session> {
        self.sessions.lock().by_token.get(session_token).cloned()
    }

    pub fn open_sessions(&self, experiment_id: &str) -> usize {
        self.sessions
            .lock()
            .by_token
            .values()
            .filter(|s| s.state == SessionState::Open && s.experiment_id == experiment_id)
            .count()
    }

    /// Issues (or returns the existing) upload credential for a vehicle, so
    /// vehicles outside any experiment can still deliver telemetry.
    pub fn enroll(&self, vin: &Vin) -> String {
        let mut devices = self.devices.write();
        if let Some(token) = devices.by_vin.get(vin) {
            return token.clone();
        }
        let n = self.token_counter.fetch_add(1, Ordering::Relaxed);
        let token = format!("d-{:016x}", fnv1a64(format!("device:{vin}:{n}").as_bytes()));
        devices.by_vin.insert(vin.clone(), token.clone());
        devices.by_token.insert(token.clone(), vin.clone());
        token
    }

    fn credential_vin(&self, token: &str, now: Timestamp) -> Option<Vin> {
        {
            let mut sessions = self.sessions.lock();
            if let Some(s) = sessions.by_token.get_mut(token) {
                s.last_seen = now;
                return Some(s.vin.clone());
            }
        }
        self.devices.read().by_token.get(token).cloned()
    }

    /// Validates and stores an upload. Accepted records are durable before
    /// this returns; replays of stored keys are accepted and ignored.
    pub fn ingest(
        &self,
        batch: Vec<TelemetryRecord>,
        token: &str,
        now: Timestamp,
    ) -> Result<IngestReceipt, ServiceError> {
        self.ingest_parsed(batch.into_iter().map(Some).collect(), token, now)
    }

    /// As [`CloudService::ingest`]; `None` entries are records that failed to parse.
    pub fn ingest_parsed(
        &self,
        batch: Vec<Option<TelemetryRecord>>,
        token: &str,
        now: Timestamp,
    ) -> Result<IngestReceipt, ServiceError> {
        let vin = self
            .credential_vin(token, now)
            .ok_or(ServiceError::UnknownSession)?;
        if batch.len() > self.config.max_batch_records {
            return Err(ServiceError::BatchTooLarge {
                got: batch.len(),
                limit: self.config.max_batch_records,
            });
        }
        let mut rejected = Vec::new();
        let mut accepted = Vec::with_capacity(batch.len());
        {
            let observables = self.observables.read();
            for (index, record) in batch.into_iter().enumerate() {
                let Some(record) = record else {
                    rejected.push(Rejection {
                        index,
                        reason: RejectReason::Malformed,
                    });
                    continue;
                };
                let verdict = if record.vin != vin {
                    Validation::Rejected(RejectReason::VinMismatch)
                } else {
                    store::validate(&record, &observables, now)
                };
                match verdict {
                    Validation::Accepted(quality_flags) => accepted.push(StoredRecord {
                        record,
                        ingested_at: now,
                        quality_flags,
                    }),
                    Validation::Rejected(reason) => rejected.push(Rejection { index, reason }),
                }
            }
        }
        let n = accepted.len();
        let inserted = self
            .store
            .insert_batch(accepted)?
            .into_iter()
            .filter(|b| *b)
            .count();
        Ok(IngestReceipt {
            accepted: n,
            rejected,
            inserted,
        })
    }

    pub fn query_live(&self, experiment_id: &str) -> Result<LiveSnapshot, ServiceError> {
        let experiment = self.experiment(experiment_id)?;
        let live = self.store.live(experiment_id);
        let records_per_variant = live
            .records_per_variant
            .iter()
            .map(|(v, n)| (v.to_string(), *n))
            .collect();
        let mut running_means: Vec<RunningMean> = live
            .sums
            .iter()
            .map(|((variant, observable), (sum, count))| RunningMean {
                variant_id: variant.to_string(),
                observable: observable.to_string(),
                mean: sum / *count as f64,
                count: *count,
            })
            .collect();
        running_means
            .sort_by(|a, b| (&a.variant_id, &a.observable).cmp(&(&b.variant_id, &b.observable)));
        let audit = self.audit(Some(experiment_id));
        let audit_tail = audit[audit.len().saturating_sub(AUDIT_TAIL)..].to_vec();
        Ok(LiveSnapshot {
            experiment_id: experiment_id.into(),
            state: experiment.state,
            epoch: experiment.epoch,
            records_per_variant,
            running_means,
            open_sessions: self.open_sessions(experiment_id),
            audit_tail,
        })
    }

    /// Analysis report for one epoch (the current one by default). Uses the
    /// experiment's metric definitions, or a per-vehicle mean of every
    /// observable of the function when none are set.
    pub fn report(&self, experiment_id: &str, epoch: Option<u32>) -> Result<Report, ServiceError> {
        let experiment = self.experiment(experiment_id)?;
        let metrics = if experiment.metrics.is_empty() {
            self.function(&experiment.function_id)
                .map(|f| {
                    f.observables
                        .iter()
                        .map(|o| MetricDefinition::mean_of(&o.name))
                        .collect()
                })
                .unwrap_or_default()
        } else {
            experiment.metrics.clone()
        };
        let epoch = epoch.unwrap_or(experiment.epoch);
        Ok(self
            .store
            .with_records(|records| analysis::report(&experiment, epoch, records, &metrics)))
    }

    pub fn export_csv(
        &self,
        experiment_id: &str,
        epoch: Option<u32>,
    ) -> Result<Vec<u8>, ServiceError> {
        self.experiment(experiment_id)?;
        let mut query = Query::experiment(experiment_id);
        query.epoch = epoch;
        Ok(self.store.export_csv(&query))
    }
}

fn read_ndjson<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ServiceError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(StoreError::from(e).into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(StoreError::from)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                file: path.display().to_string(),
                message: format!("line {}: {e}", i + 1),
            })?,
        );
    }
    Ok(out)
}

fn append_ndjson<T: Serialize>(path: &Path, value: &T) -> Result<(), ServiceError> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(StoreError::from)?;
    let mut line = serde_json::to_vec(value).map_err(|e| ServiceError::Audit(e.to_string()))?;
    line.push(b'\n');
    file.write_all(&line).map_err(StoreError::from)?;
    file.sync_data().map_err(StoreError::from)?;
    Ok(())
}
