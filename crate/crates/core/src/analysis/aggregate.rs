use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{AnalysisError, MetricDefinition, OutOfRangeRule, TripReduction, VehicleReduction};
use crate::model::{Name, VariantTag, Vin};
use crate::store::{QualityFlag, StoredRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleValue {
    pub vin: Vin,
    pub variant: VariantTag,
    pub epoch: Option<u32>,
    pub value: f64,
    pub trips: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleAggregate {
    /// One value per (vehicle, variant), ordered by VIN.
    pub values: Vec<VehicleValue>,
    /// Vehicles present in the input without any qualifying record.
    pub excluded: usize,
}

impl VehicleAggregate {
    pub fn values_for(&self, variant: &str) -> Vec<f64> {
        self.values
            .iter()
            .filter(|v| v.variant.as_str() == variant)
            .map(|v| v.value)
            .collect()
    }
}

/// Reduces records to one value per vehicle: first per trip, then over the
/// vehicle's trips.
pub fn aggregate_per_vehicle<'a>(
    records: impl IntoIterator<Item = &'a StoredRecord>,
    metric: &MetricDefinition,
) -> Result<VehicleAggregate, AnalysisError> {
    let mut epoch: Option<Option<u32>> = None;
    let mut present: BTreeSet<&Vin> = BTreeSet::new();
    // (vin, variant) -> trip -> (sequence, value)
    let mut grouped: BTreeMap<(&Vin, &VariantTag), HashMap<&Name, Vec<(u64, f64)>>> =
        BTreeMap::new();
    for stored in records {
        let r = &stored.record;
        match epoch {
            None => epoch = Some(r.epoch),
            Some(e) if e != r.epoch => return Err(AnalysisError::MixedEpoch),
            Some(_) => {}
        }
        present.insert(&r.vin);
        if &*r.observable != metric.observable.as_str() {
            continue;
        }
        if metric.out_of_range == OutOfRangeRule::Exclude
            && stored.quality_flags.contains(&QualityFlag::OutOfRange)
        {
            continue;
        }
        grouped
            .entry((&r.vin, &r.variant))
            .or_default()
            .entry(&r.trip_id)
            .or_default()
            .push((r.sequence_number, r.value));
    }

    let epoch = epoch.flatten();
    let contributing: BTreeSet<&Vin> = grouped.keys().map(|(vin, _)| *vin).collect();
    let excluded = present.difference(&contributing).count();

    let values = grouped
        .into_iter()
        .map(|((vin, variant), trips)| {
            let mut per_trip: Vec<(&Name, f64)> = trips
                .into_iter()
                .map(|(trip, mut samples)| {
                    samples.sort_by_key(|(seq, _)| *seq);
                    (trip, reduce_trip(metric.per_trip, &samples))
                })
                .collect();
            per_trip.sort_by(|a, b| a.0.cmp(b.0));
            let sum: f64 = per_trip.iter().map(|(_, v)| v).sum();
            let value = match metric.per_vehicle {
                VehicleReduction::Sum => sum,
                VehicleReduction::Mean => sum / per_trip.len() as f64,
            };
            VehicleValue {
                vin: vin.clone(),
                variant: variant.clone(),
                epoch,
                value,
                trips: per_trip.len(),
            }
        })
        .collect();
    Ok(VehicleAggregate { values, excluded })
}

fn reduce_trip(reduction: TripReduction, samples: &[(u64, f64)]) -> f64 {
    let values = samples.iter().map(|(_, v)| *v);
    match reduction {
        TripReduction::Mean => values.sum::<f64>() / samples.len() as f64,
        TripReduction::Sum => values.sum(),
        TripReduction::Last => samples.last().map(|(_, v)| *v).unwrap_or(f64::NAN),
        TripReduction::Max => values.fold(f64::NEG_INFINITY, f64::max),
    }
}
