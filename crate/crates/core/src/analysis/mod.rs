//! Experiment analysis: per-vehicle aggregation, Welch's t-test and
//! sample-ratio-mismatch detection.
//!
//! The vehicle is the randomization unit, so every metric is reduced to one
//! value per vehicle before any test runs.

mod aggregate;
pub mod distributions;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{aggregate_per_vehicle, VehicleAggregate, VehicleValue};
pub use report::{report, Comparison, ExperimentHealth, MetricResult, Report, VariantStats};

/// Significance level used for the two-sided confidence interval.
pub const CONFIDENCE: f64 = 0.95;
/// A sample-ratio mismatch is flagged below this p-value.
pub const SRM_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("records span several epochs")]
    MixedEpoch,
    #[error("each sample needs at least two values (got {a} and {b})")]
    InsufficientSample { a: usize, b: usize },
    #[error("allocation has {fractions} fractions for {counts} observed counts")]
    ShapeMismatch { counts: usize, fractions: usize },
}

impl AnalysisError {
    pub fn code(&self) -> &'static str {
        match self {
            AnalysisError::MixedEpoch => "MixedEpoch",
            AnalysisError::InsufficientSample { .. } => "InsufficientSample",
            AnalysisError::ShapeMismatch { .. } => "ShapeMismatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripReduction {
    Mean,
    Sum,
    Last,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleReduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfRangeRule {
    Include,
    #[default]
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDefinition {
    pub name: String,
    pub observable: String,
    pub per_trip: TripReduction,
    pub per_vehicle: VehicleReduction,
    #[serde(default)]
    pub out_of_range: OutOfRangeRule,
}

impl MetricDefinition {
    pub fn mean_of(observable: &str) -> Self {
        MetricDefinition {
            name: observable.into(),
            observable: observable.into(),
            per_trip: TripReduction::Mean,
            per_vehicle: VehicleReduction::Mean,
            out_of_range: OutOfRangeRule::Exclude,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    /// `mean(b) - mean(a)`.
    pub delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub t: f64,
    pub df: f64,
    pub std_error: f64,
}

pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let var = if xs.len() > 1 {
        ss / (n - 1.0)
    } else {
        f64::NAN
    };
    (mean, var)
}

/// Welch's unequal-variance t-test of `b` against `a`, with a two-sided
/// p-value and a 95% confidence interval on `mean(b) - mean(a)`.
pub fn welch_test(a: &[f64], b: &[f64]) -> Result<WelchResult, AnalysisError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(AnalysisError::InsufficientSample {
            a: a.len(),
            b: b.len(),
        });
    }
    let (mean_a, var_a) = mean_var(a);
    let (mean_b, var_b) = mean_var(b);
    let se_a = var_a / a.len() as f64;
    let se_b = var_b / b.len() as f64;
    let se2 = se_a + se_b;
    let delta = mean_b - mean_a;
    let std_error = se2.sqrt();

    if se2 == 0.0 {
        // Both samples constant: the difference is exact.
        return Ok(WelchResult {
            delta,
            ci_low: delta,
            ci_high: delta,
            p_value: if delta == 0.0 { 1.0 } else { 0.0 },
            t: if delta == 0.0 {
                0.0
            } else {
                delta.signum() * f64::INFINITY
            },
            df: (a.len() + b.len() - 2) as f64,
            std_error,
        });
    }
    let df =
        se2 * se2 / (se_a * se_a / (a.len() as f64 - 1.0) + se_b * se_b / (b.len() as f64 - 1.0));
    let t = delta / std_error;
    let p_value = distributions::student_t_two_sided(t, df);
    let q = distributions::student_t_quantile(0.5 + CONFIDENCE / 2.0, df);
    Ok(WelchResult {
        delta,
        ci_low: delta - q * std_error,
        ci_high: delta + q * std_error,
        p_value,
        t,
        df,
        std_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrmResult {
    pub expected: Vec<f64>,
    pub observed: Vec<u64>,
    pub chi_square: f64,
    pub p_value: f64,
    pub flagged: bool,
}

/// Pearson chi-square goodness-of-fit of observed unit counts against the
/// configured allocation.
pub fn srm_check(observed: &[u64], allocation: &[f64]) -> Result<SrmResult, AnalysisError> {
    if observed.len() != allocation.len() {
        return Err(AnalysisError::ShapeMismatch {
            counts: observed.len(),
            fractions: allocation.len(),
        });
    }
    let total: u64 = observed.iter().sum();
    let expected: Vec<f64> = allocation.iter().map(|f| f * total as f64).collect();
    let (chi_square, p_value) = if total == 0 || observed.len() < 2 {
        (0.0, 1.0)
    } else {
        let chi: f64 = observed
            .iter()
            .zip(&expected)
            .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
            .sum();
        (
            chi,
            distributions::chi_square_sf(chi, (observed.len() - 1) as f64),
        )
    };
    Ok(SrmResult {
        expected,
        observed: observed.to_vec(),
        chi_square,
        p_value,
        flagged: p_value < SRM_THRESHOLD,
    })
}
