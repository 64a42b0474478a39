use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fleetlab::model::{ObservableKind, ObservableSpec, TelemetryRecord, VariantTag};
use fleetlab::sim::generate_vins;
use fleetlab::store::{
    parse_csv, validate, ExportRow, ObservableRegistry, QualityFlag, Query, RejectReason,
    StoredRecord, TelemetryStore, Validation, CSV_HEADER,
};

mod common;
use common::{at, t0};

fn record(vin: usize, trip: u32, seq: u64, value: f64) -> StoredRecord {
    let vins = generate_vins(8, 1);
    StoredRecord {
        record: TelemetryRecord {
            vin: vins[vin % vins.len()].clone(),
            trip_id: format!("trip-{trip}").into(),
            sequence_number: seq,
            timestamp: at(seq as i64 * 60),
            observable: if seq % 2 == 0 {
                "battery_soc"
            } else {
                "energy_per_km"
            }
            .into(),
            value,
            unit: "%".into(),
            variant: if trip % 2 == 0 {
                VariantTag::parse("treatment")
            } else {
                VariantTag::Local
            },
            experiment_id: (trip % 2 == 0).then(|| "exp".into()),
            epoch: (trip % 2 == 0).then_some(trip / 4),
            kind: ObservableKind::Dynamic,
        },
        ingested_at: at(86_400),
        quality_flags: BTreeSet::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_in_any_order_is_idempotent(
        keys in prop::collection::btree_set((0usize..8, 0u32..6, 0u64..40), 1..200),
        seed in any::<u64>(),
    ) {
        let batch: Vec<StoredRecord> = keys.iter().map(|&(v, t, s)| record(v, t, s, s as f64)).collect();
        let reference = TelemetryStore::in_memory();
        reference.insert_batch(batch.clone()).unwrap();

        let mut replay: Vec<StoredRecord> = batch.iter().chain(batch.iter()).cloned().collect();
        // Replays may carry a different value; the first write wins.
        for r in replay.iter_mut().skip(batch.len()) {
            r.record.value += 1000.0;
        }
        replay.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let store = TelemetryStore::in_memory();
        let mut fresh = 0;
        for chunk in replay.chunks(17) {
            fresh += store.insert_batch(chunk.to_vec()).unwrap().into_iter().filter(|b| *b).count();
        }
        prop_assert_eq!(fresh, batch.len());
        prop_assert_eq!(store.len(), reference.len());
        prop_assert_eq!(store.keys(), reference.keys());
    }

    #[test]
    fn csv_round_trip(values in prop::collection::vec(-1e12f64..1e12, 1..300)) {
        let store = TelemetryStore::in_memory();
        let batch: Vec<StoredRecord> =
            values.iter().enumerate().map(|(i, v)| record(i, i as u32 % 6, i as u64, *v)).collect();
        store.insert_batch(batch).unwrap();
        let query = Query::default();
        let expected: Vec<ExportRow> = store.query(&query).iter().map(ExportRow::from).collect();
        prop_assert_eq!(parse_csv(&store.export_csv(&query)).unwrap(), expected);
    }
}

#[test]
fn csv_header_and_empty_export() {
    let store = TelemetryStore::in_memory();
    let bytes = store.export_csv(&Query::default());
    assert_eq!(
        String::from_utf8(bytes.clone()).unwrap(),
        format!("{CSV_HEADER}\n")
    );
    assert!(parse_csv(&bytes).unwrap().is_empty());
}

#[test]
fn query_filters_compose() {
    let store = TelemetryStore::in_memory();
    store
        .insert_batch(
            (0..40)
                .map(|i| record(i % 3, (i % 8) as u32, i as u64, 1.0))
                .collect(),
        )
        .unwrap();
    let vin = generate_vins(8, 1)[1].clone();
    let q = Query {
        experiment_id: Some("exp".into()),
        epoch: Some(0),
        time_range: Some((t0(), at(20 * 60))),
        observables: Some(BTreeSet::from(["battery_soc".to_string()])),
        vin: Some(vin.clone()),
    };
    let hits = store.query(&q);
    assert!(!hits.is_empty());
    for r in &hits {
        let r = &r.record;
        assert_eq!(r.experiment_id.as_deref(), Some("exp"));
        assert_eq!(r.epoch, Some(0));
        assert!(r.timestamp < at(20 * 60));
        assert_eq!(&*r.observable, "battery_soc");
        assert_eq!(r.vin, vin);
    }
    let all = store.query(&Query::default());
    let manual = all.iter().filter(|r| q.matches(&r.record)).count();
    assert_eq!(manual, hits.len());
}

#[test]
fn persistent_store_survives_reopen_with_replays() {
    let dir = tempfile::tempdir().unwrap();
    let batch: Vec<StoredRecord> = (0..500)
        .map(|i| record(i % 5, (i / 50) as u32, i as u64, i as f64))
        .collect();
    {
        let store = TelemetryStore::open(dir.path()).unwrap();
        store.insert_batch(batch[..300].to_vec()).unwrap();
    }
    let store = TelemetryStore::open(dir.path()).unwrap();
    assert_eq!(store.len(), 300);
    let fresh = store
        .insert_batch(batch.clone())
        .unwrap()
        .into_iter()
        .filter(|b| *b)
        .count();
    assert_eq!(fresh, 200);
    drop(store);
    let store = TelemetryStore::open(dir.path()).unwrap();
    assert_eq!(store.len(), 500);
    let reference = TelemetryStore::in_memory();
    reference.insert_batch(batch).unwrap();
    assert_eq!(store.keys(), reference.keys());
    assert_eq!(
        store.query(&Query::default()),
        reference.query(&Query::default())
    );
}

#[test]
fn validation_flags_and_rejections() {
    let mut registry = ObservableRegistry::new();
    registry
        .register(ObservableSpec::dynamic("battery_soc", 60.0, "%").with_range(0.0, 100.0))
        .unwrap();
    let good = record(0, 1, 0, 50.0).record;
    assert_eq!(
        validate(&good, &registry, at(3600)),
        Validation::Accepted(BTreeSet::new())
    );

    let mut high = good.clone();
    high.value = 140.0;
    high.timestamp = at(3600 + 301);
    assert_eq!(
        validate(&high, &registry, at(3600)),
        Validation::Accepted(BTreeSet::from([
            QualityFlag::OutOfRange,
            QualityFlag::ClockSkew
        ]))
    );

    let mut unknown = good.clone();
    unknown.observable = "nope".into();
    assert_eq!(
        validate(&unknown, &registry, at(3600)),
        Validation::Rejected(RejectReason::UnknownObservable)
    );
    let mut nan = good.clone();
    nan.value = f64::NAN;
    assert_eq!(
        validate(&nan, &registry, at(3600)),
        Validation::Rejected(RejectReason::TypeMismatch)
    );
    let mut unit = good.clone();
    unit.unit = "kWh".into();
    assert_eq!(
        validate(&unit, &registry, at(3600)),
        Validation::Rejected(RejectReason::TypeMismatch)
    );
    let mut kind = good;
    kind.kind = ObservableKind::Stationary;
    assert_eq!(
        validate(&kind, &registry, at(3600)),
        Validation::Rejected(RejectReason::TypeMismatch)
    );
}
