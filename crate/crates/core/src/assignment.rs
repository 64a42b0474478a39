//! Deterministic VIN → variant assignment.
//!
//! A VIN's bucket is the FNV-1a 64-bit hash of `salt:epoch:vin` modulo
//! [`BUCKETS`]. Variants own contiguous bucket ranges, control first.
//! Re-partitioning bumps the epoch, which re-randomizes every vehicle while
//! keeping older epochs reconstructible.

use serde::{Deserialize, Serialize};

use crate::model::{Experiment, ExperimentState, ModelError, Vin};

pub const BUCKETS: u32 = 10_000;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, b| {
        (hash ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

/// Bucket in `[0, BUCKETS)` for `vin` under `salt` and `epoch`.
pub fn bucket(vin: &Vin, salt: &str, epoch: u32) -> u32 {
    let key = format!("{salt}:{epoch}:{vin}");
    (fnv1a64(key.as_bytes()) % u64::from(BUCKETS)) as u32
}

/// Exclusive upper bucket boundary of each variant:
/// `floor(cumulative_fraction * BUCKETS)`, with the last forced to `BUCKETS`.
pub fn boundaries(allocation: &[f64]) -> Vec<u32> {
    let mut cumulative = 0.0;
    let mut out: Vec<u32> = allocation
        .iter()
        .map(|f| {
            cumulative += f;
            ((cumulative * f64::from(BUCKETS)).floor() as u32).min(BUCKETS)
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = BUCKETS;
    }
    out
}

/// Index of the variant owning `bucket`.
pub fn variant_index(boundaries: &[u32], bucket: u32) -> usize {
    boundaries.partition_point(|&b| b <= bucket)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub vin: Vin,
    pub experiment_id: String,
    pub epoch: u32,
    pub bucket: u32,
    /// `None` when the VIN is ineligible.
    pub variant_id: Option<String>,
}

impl Assignment {
    pub fn is_eligible(&self) -> bool {
        self.variant_id.is_some()
    }
}

/// Assigns `vin` to a variant of `experiment` at its current epoch.
pub fn assign(vin: &Vin, experiment: &Experiment) -> Assignment {
    let b = bucket(vin, &experiment.salt, experiment.epoch);
    let variant_id = experiment.eligibility.matches(vin).then(|| {
        let idx = variant_index(&boundaries(&experiment.allocation), b);
        experiment.variants[idx.min(experiment.variants.len() - 1)]
            .variant_id
            .clone()
    });
    Assignment {
        vin: vin.clone(),
        experiment_id: experiment.experiment_id.clone(),
        epoch: experiment.epoch,
        bucket: b,
        variant_id,
    }
}

/// Starts a new assignment epoch. Only running experiments can be re-partitioned.
pub fn repartition(experiment: &Experiment) -> Result<Experiment, ModelError> {
    if !experiment.is_running() {
        return Err(ModelError::IllegalTransition {
            from: experiment.state,
            event: "repartition".into(),
        });
    }
    debug_assert!(matches!(
        experiment.state,
        ExperimentState::Active | ExperimentState::Paused
    ));
    let mut out = experiment.clone();
    out.epoch += 1;
    Ok(out)
}
