use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{aggregate_per_vehicle, mean_var, srm_check, welch_test, MetricDefinition, SrmResult};
use crate::model::{Experiment, ExperimentState, VariantTag, Vin};
use crate::store::{QualityFlag, StoredRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantStats {
    pub variant_id: String,
    /// Vehicles contributing a value.
    pub n: usize,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
}

/// One treatment compared against control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub variant_id: String,
    pub delta: Option<f64>,
    pub relative_delta_pct: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: String,
    pub observable: String,
    pub variants: Vec<VariantStats>,
    pub comparisons: Vec<Comparison>,
    pub srm: SrmResult,
    pub excluded_vehicles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentHealth {
    pub state: ExperimentState,
    pub total_records: u64,
    pub records_per_variant: Vec<(String, u64)>,
    pub vehicles_per_variant: Vec<(String, u64)>,
    pub out_of_range_records: u64,
    pub clock_skew_records: u64,
    /// Sample-ratio check over all vehicles that reported in this epoch.
    pub srm: SrmResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment_id: String,
    pub epoch: u32,
    pub health: ExperimentHealth,
    pub metrics: Vec<MetricResult>,
}

impl Report {
    pub fn metric(&self, name: &str) -> Option<&MetricResult> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

/// Builds the experiment report for one epoch from stored records.
///
/// Records outside the experiment's variants (including `Local`) and outside
/// `epoch` are ignored, so epochs never pool.
pub fn report(
    experiment: &Experiment,
    epoch: u32,
    records: &[StoredRecord],
    metrics: &[MetricDefinition],
) -> Report {
    let variant_ids: Vec<&str> = experiment
        .variants
        .iter()
        .map(|v| v.variant_id.as_str())
        .collect();
    let scoped: Vec<&StoredRecord> = records
        .iter()
        .filter(|r| {
            r.record.epoch == Some(epoch)
                && r.record.experiment_id.as_deref() == Some(experiment.experiment_id.as_str())
                && matches!(&r.record.variant, VariantTag::Variant(v) if variant_ids.contains(&&**v))
        })
        .collect();

    let mut records_per_variant = vec![0u64; variant_ids.len()];
    let mut vehicles: Vec<BTreeSet<&Vin>> = vec![BTreeSet::new(); variant_ids.len()];
    let mut out_of_range = 0;
    let mut clock_skew = 0;
    for r in &scoped {
        let idx = variant_ids
            .iter()
            .position(|v| *v == r.record.variant.as_str())
            .expect("scoped to experiment variants");
        records_per_variant[idx] += 1;
        vehicles[idx].insert(&r.record.vin);
        out_of_range += u64::from(r.quality_flags.contains(&QualityFlag::OutOfRange));
        clock_skew += u64::from(r.quality_flags.contains(&QualityFlag::ClockSkew));
    }
    let vehicle_counts: Vec<u64> = vehicles.iter().map(|s| s.len() as u64).collect();
    let health = ExperimentHealth {
        state: experiment.state,
        total_records: scoped.len() as u64,
        records_per_variant: zip_ids(&variant_ids, &records_per_variant),
        vehicles_per_variant: zip_ids(&variant_ids, &vehicle_counts),
        out_of_range_records: out_of_range,
        clock_skew_records: clock_skew,
        srm: srm_check(&vehicle_counts, &experiment.allocation)
            .expect("allocation validated against variants"),
    };

    let metrics = metrics
        .iter()
        .map(|m| metric_result(experiment, &variant_ids, &scoped, m))
        .collect();

    Report {
        experiment_id: experiment.experiment_id.clone(),
        epoch,
        health,
        metrics,
    }
}

fn zip_ids(ids: &[&str], counts: &[u64]) -> Vec<(String, u64)> {
    ids.iter()
        .map(|s| s.to_string())
        .zip(counts.iter().copied())
        .collect()
}

fn metric_result(
    experiment: &Experiment,
    variant_ids: &[&str],
    scoped: &[&StoredRecord],
    metric: &MetricDefinition,
) -> MetricResult {
    let aggregate =
        aggregate_per_vehicle(scoped.iter().copied(), metric).expect("records scoped to one epoch");
    let samples: Vec<Vec<f64>> = variant_ids
        .iter()
        .map(|v| aggregate.values_for(v))
        .collect();
    let variants = variant_ids
        .iter()
        .zip(&samples)
        .map(|(id, xs)| {
            let (mean, variance) = if xs.is_empty() {
                (None, None)
            } else {
                let (m, v) = mean_var(xs);
                (Some(m), v.is_finite().then_some(v))
            };
            VariantStats {
                variant_id: id.to_string(),
                n: xs.len(),
                mean,
                variance,
            }
        })
        .collect();

    let control = &samples[0];
    let comparisons = variant_ids
        .iter()
        .zip(&samples)
        .skip(1)
        .map(|(id, treatment)| match welch_test(control, treatment) {
            Ok(w) => {
                let control_mean = mean_var(control).0;
                Comparison {
                    variant_id: id.to_string(),
                    delta: Some(w.delta),
                    relative_delta_pct: (control_mean != 0.0)
                        .then(|| 100.0 * w.delta / control_mean),
                    ci_low: Some(w.ci_low),
                    ci_high: Some(w.ci_high),
                    p_value: Some(w.p_value),
                    error: None,
                }
            }
            Err(e) => Comparison {
                variant_id: id.to_string(),
                delta: None,
                relative_delta_pct: None,
                ci_low: None,
                ci_high: None,
                p_value: None,
                error: Some(e.code().to_string()),
            },
        })
        .collect();

    let counts: Vec<u64> = samples.iter().map(|s| s.len() as u64).collect();
    MetricResult {
        metric: metric.name.clone(),
        observable: metric.observable.clone(),
        variants,
        comparisons,
        srm: srm_check(&counts, &experiment.allocation)
            .expect("allocation validated against variants"),
        excluded_vehicles: aggregate.excluded,
    }
}
