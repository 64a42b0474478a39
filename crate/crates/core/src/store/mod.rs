//! Centralized telemetry storage.
//!
//! Records are validated against the registered observables, keyed by
//! `(vin, trip_id, sequence_number)` and inserted at most once, so replays of
//! at-least-once uploads leave the store unchanged. Suspicious values are
//! flagged, never dropped.

mod csv_export;
mod disk;

use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Name, ObservableKind, ObservableSpec, TelemetryRecord, Timestamp, VariantTag, Vin,
};

pub use csv_export::{export_csv, parse_csv, ExportRow, CSV_HEADER};
use disk::DiskLog;

/// Timestamps further than this ahead of ingestion time get `ClockSkew`.
pub const CLOCK_SKEW_TOLERANCE_S: i64 = 5 * 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QualityFlag {
    OutOfRange,
    ClockSkew,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    UnknownObservable,
    TypeMismatch,
    MalformedVin,
    /// The record's VIN differs from the uploader's.
    VinMismatch,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Accepted(BTreeSet<QualityFlag>),
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRecord {
    #[serde(flatten)]
    pub record: TelemetryRecord,
    pub ingested_at: Timestamp,
    #[serde(default)]
    pub quality_flags: BTreeSet<QualityFlag>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt segment {file}: {message}")]
    Corrupt { file: String, message: String },
    #[error("observable {0:?} registered twice with different definitions")]
    ConflictingObservable(String),
}

/// Registered observables by name.
#[derive(Debug, Clone, Default)]
pub struct ObservableRegistry {
    specs: HashMap<String, ObservableSpec>,
}

impl ObservableRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, spec: ObservableSpec) -> Result<(), StoreError> {
        match self.specs.get(&spec.name) {
            Some(existing) if existing != &spec => {
                Err(StoreError::ConflictingObservable(spec.name.clone()))
            }
            _ => {
                self.specs.insert(spec.name.clone(), spec);
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ObservableSpec> {
        self.specs.get(name)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

/// Checks one record against the registry at ingestion time `now`.
pub fn validate(
    record: &TelemetryRecord,
    registry: &ObservableRegistry,
    now: Timestamp,
) -> Validation {
    // Records constructed in-process bypass deserialization, so recheck the VIN.
    if Vin::parse(record.vin.as_str()).is_err() {
        return Validation::Rejected(RejectReason::MalformedVin);
    }
    let Some(spec) = registry.get(&record.observable) else {
        return Validation::Rejected(RejectReason::UnknownObservable);
    };
    if spec.kind != record.kind || *record.unit != *spec.unit || !record.value.is_finite() {
        return Validation::Rejected(RejectReason::TypeMismatch);
    }
    let mut flags = BTreeSet::new();
    if let Some([lo, hi]) = spec.plausible_range {
        if record.value < lo || record.value > hi {
            flags.insert(QualityFlag::OutOfRange);
        }
    }
    if (record.timestamp - now).num_seconds() > CLOCK_SKEW_TOLERANCE_S {
        flags.insert(QualityFlag::ClockSkew);
    }
    Validation::Accepted(flags)
}

/// Record selection for [`TelemetryStore::query`]. Absent fields do not filter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Query {
    #[serde(default)]
    pub experiment_id: Option<String>,
    #[serde(default)]
    pub epoch: Option<u32>,
    /// Inclusive start, exclusive end.
    #[serde(default)]
    pub time_range: Option<(Timestamp, Timestamp)>,
    #[serde(default)]
    pub observables: Option<BTreeSet<String>>,
    #[serde(default)]
    pub vin: Option<Vin>,
}

impl Query {
    pub fn experiment(experiment_id: &str) -> Self {
        Query {
            experiment_id: Some(experiment_id.into()),
            ..Default::default()
        }
    }

    pub fn with_epoch(mut self, epoch: u32) -> Self {
        self.epoch = Some(epoch);
        self
    }

    pub fn matches(&self, r: &TelemetryRecord) -> bool {
        self.experiment_id
            .as_deref()
            .is_none_or(|e| r.experiment_id.as_deref() == Some(e))
            && self.epoch.is_none_or(|e| r.epoch == Some(e))
            && self
                .time_range
                .is_none_or(|(from, to)| r.timestamp >= from && r.timestamp < to)
            && self
                .observables
                .as_ref()
                .is_none_or(|set| set.contains(&*r.observable))
            && self.vin.as_ref().is_none_or(|v| *v == r.vin)
    }
}

type RecordKey = (Vin, Name, u64);

/// Running per-experiment statistics maintained at insert time.
#[derive(Debug, Clone, Default)]
pub(crate) struct LiveAggregate {
    pub records_per_variant: HashMap<Name, u64>,
    /// (variant, observable) -> (sum, count)
    pub sums: HashMap<(Name, Name), (f64, u64)>,
}

#[derive(Debug, Default)]
struct StoreInner {
    records: Vec<StoredRecord>,
    index: HashMap<RecordKey, usize>,
    live: HashMap<Name, LiveAggregate>,
}

/// Append-only record log plus key index, optionally persisted to a directory
/// of newline-delimited JSON segments.
#[derive(Debug, Default)]
pub struct TelemetryStore {
    inner: RwLock<StoreInner>,
    disk: Option<Mutex<DiskLog>>,
}

impl TelemetryStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a persistent store, replaying existing segments.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let (log, existing) = DiskLog::open(dir)?;
        let store = TelemetryStore {
            inner: RwLock::new(StoreInner::default()),
            disk: Some(Mutex::new(log)),
        };
        {
            let mut inner = store.inner.write();
            for record in existing {
                inner.insert(record);
            }
        }
        Ok(store)
    }

    /// Inserts one record; returns whether its key was new.
    pub fn insert(&self, record: StoredRecord) -> Result<bool, StoreError> {
        Ok(self.insert_batch(vec![record])?[0])
    }

    /// Inserts a batch atomically with respect to readers. New records are
    /// persisted before this returns.
    pub fn insert_batch(&self, records: Vec<StoredRecord>) -> Result<Vec<bool>, StoreError> {
        let mut inner = self.inner.write();
        let mut fresh = Vec::new();
        let inserted: Vec<bool> = records
            .into_iter()
            .map(|r| {
                let new = inner.insert(r);
                if new {
                    fresh.push(inner.records.len() - 1);
                }
                new
            })
            .collect();
        if let Some(disk) = &self.disk {
            let batch: Vec<&StoredRecord> = fresh.iter().map(|&i| &inner.records[i]).collect();
            disk.lock().append(&batch)?;
        }
        Ok(inserted)
    }

    pub fn len(&self) -> usize {
        self.inner.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, vin: &Vin, trip_id: &str, sequence_number: u64) -> bool {
        self.inner
            .read()
            .index
            .contains_key(&(vin.clone(), Name::from(trip_id), sequence_number))
    }

    /// Matching records sorted by `(vin, trip_id, sequence_number)`.
    pub fn query(&self, query: &Query) -> Vec<StoredRecord> {
        let inner = self.inner.read();
        let mut out: Vec<StoredRecord> = inner
            .records
            .iter()
            .filter(|r| query.matches(&r.record))
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            (&a.record.vin, &a.record.trip_id, a.record.sequence_number).cmp(&(
                &b.record.vin,
                &b.record.trip_id,
                b.record.sequence_number,
            ))
        });
        out
    }

    /// Applies `f` to a consistent snapshot of all stored records.
    pub fn with_records<R>(&self, f: impl FnOnce(&[StoredRecord]) -> R) -> R {
        f(&self.inner.read().records)
    }

    /// All stored keys, sorted.
    pub fn keys(&self) -> Vec<RecordKey> {
        let mut keys: Vec<RecordKey> = self.inner.read().index.keys().cloned().collect();
        keys.sort();
        keys
    }

    pub fn export_csv(&self, query: &Query) -> Vec<u8> {
        export_csv(&self.query(query))
    }

    pub(crate) fn live(&self, experiment_id: &str) -> LiveAggregate {
        self.inner
            .read()
            .live
            .get(experiment_id)
            .cloned()
            .unwrap_or_default()
    }
}

impl StoreInner {
    fn insert(&mut self, record: StoredRecord) -> bool {
        let r = &record.record;
        let key = (r.vin.clone(), r.trip_id.clone(), r.sequence_number);
        match self.index.entry(key) {
            Entry::Occupied(_) => return false,
            Entry::Vacant(slot) => {
                slot.insert(self.records.len());
            }
        }
        if let Some(exp) = &r.experiment_id {
            let live = self.live.entry(exp.clone()).or_default();
            let variant = match &r.variant {
                VariantTag::Variant(v) => v.clone(),
                VariantTag::Local => Name::from(VariantTag::LOCAL),
            };
            *live.records_per_variant.entry(variant.clone()).or_default() += 1;
            let slot = live
                .sums
                .entry((variant, r.observable.clone()))
                .or_default();
            slot.0 += r.value;
            slot.1 += 1;
        }
        self.records.push(record);
        true
    }
}

/// Kinds of the two agent event observables every store accepts.
pub fn system_observables() -> Vec<ObservableSpec> {
    vec![
        ObservableSpec {
            name: crate::agent::INTERRUPT_OBSERVABLE.into(),
            kind: ObservableKind::Stationary,
            sampling_period: None,
            unit: "event".into(),
            plausible_range: None,
        },
        ObservableSpec {
            name: crate::agent::DROPPED_OBSERVABLE.into(),
            kind: ObservableKind::Stationary,
            sampling_period: None,
            unit: "records".into(),
            plausible_range: None,
        },
    ]
}
