use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::model::{transition, Experiment, LifecycleEvent, ModelError, ParameterSet, Timestamp};

/// One steering action. The log is append-only; [`replay`] over it rebuilds
/// every experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub at: Timestamp,
    pub experiment_id: String,
    pub action: AuditAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum AuditAction {
    Created {
        experiment: Box<Experiment>,
    },
    Transitioned {
        event: LifecycleEvent,
    },
    Repartitioned {
        epoch: u32,
    },
    OverridesAdjusted {
        variant_id: String,
        overrides: ParameterSet,
    },
}

/// Rebuilds experiment state from an audit log.
pub fn replay<'a>(
    entries: impl IntoIterator<Item = &'a AuditEntry>,
) -> Result<BTreeMap<String, Experiment>, ModelError> {
    let mut out: BTreeMap<String, Experiment> = BTreeMap::new();
    for entry in entries {
        let id = &entry.experiment_id;
        if let AuditAction::Created { experiment } = &entry.action {
            out.insert(id.clone(), (**experiment).clone());
            continue;
        }
        let current = out.get(id).ok_or_else(|| {
            ModelError::InvalidDefinition(format!(
                "audit entry {} for unknown experiment {id:?}",
                entry.seq
            ))
        })?;
        let next = match &entry.action {
            AuditAction::Created { .. } => unreachable!(),
            AuditAction::Transitioned { event } => transition(current, *event, entry.at)?,
            AuditAction::Repartitioned { .. } => assignment::repartition(current)?,
            AuditAction::OverridesAdjusted {
                variant_id,
                overrides,
            } => {
                let mut e = current.clone();
                let variant = e
                    .variants
                    .iter_mut()
                    .find(|v| &v.variant_id == variant_id)
                    .ok_or_else(|| {
                        ModelError::InvalidVariants(format!("unknown variant {variant_id:?}"))
                    })?;
                variant.cloud_overrides = overrides.clone();
                e
            }
        };
        out.insert(id.clone(), next);
    }
    Ok(out)
}
