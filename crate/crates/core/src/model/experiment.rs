use std::fmt;

use serde::{Deserialize, Serialize};

use super::{EligibilityPredicate, ModelError, ParameterSet, SwitchPosition, Timestamp};
use crate::analysis::MetricDefinition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ExperimentState {
    #[default]
    Draft,
    Active,
    Paused,
    Concluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleEvent {
    Activate,
    Pause,
    Resume,
    Conclude,
}

impl fmt::Display for LifecycleEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LifecycleEvent::Activate => "activate",
            LifecycleEvent::Pause => "pause",
            LifecycleEvent::Resume => "resume",
            LifecycleEvent::Conclude => "conclude",
        })
    }
}

impl std::str::FromStr for LifecycleEvent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "activate" => Ok(LifecycleEvent::Activate),
            "pause" => Ok(LifecycleEvent::Pause),
            "resume" => Ok(LifecycleEvent::Resume),
            "conclude" => Ok(LifecycleEvent::Conclude),
            other => Err(format!("unknown lifecycle event {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantLabel {
    Control,
    Treatment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub variant_id: String,
    /// Always empty for control: control runs the local defaults.
    #[serde(default)]
    pub cloud_overrides: ParameterSet,
    pub label: VariantLabel,
    /// Time-critical functions only. Control is always `A`; treatments default to `B`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_position: Option<SwitchPosition>,
}

impl Variant {
    pub fn control(id: &str) -> Self {
        Variant {
            variant_id: id.into(),
            cloud_overrides: ParameterSet::new(),
            label: VariantLabel::Control,
            switch_position: None,
        }
    }

    pub fn treatment(id: &str, overrides: ParameterSet) -> Self {
        Variant {
            variant_id: id.into(),
            cloud_overrides: overrides,
            label: VariantLabel::Treatment,
            switch_position: None,
        }
    }

    pub fn is_control(&self) -> bool {
        self.label == VariantLabel::Control
    }

    pub fn effective_switch(&self) -> SwitchPosition {
        match (self.label, self.switch_position) {
            (VariantLabel::Control, _) => SwitchPosition::A,
            (VariantLabel::Treatment, Some(p)) => p,
            (VariantLabel::Treatment, None) => SwitchPosition::B,
        }
    }
}

/// One A/B test: the function under test, its variants and their allocation,
/// who is eligible, and where the experiment sits in its lifecycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub experiment_id: String,
    pub function_id: String,
    pub layer_id: String,
    pub eligibility: EligibilityPredicate,
    /// The first variant is control.
    pub variants: Vec<Variant>,
    pub allocation: Vec<f64>,
    #[serde(default)]
    pub epoch: u32,
    pub salt: String,
    #[serde(default)]
    pub state: ExperimentState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activated_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paused_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concluded_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub metrics: Vec<MetricDefinition>,
}

impl Experiment {
    pub fn variant(&self, variant_id: &str) -> Option<&Variant> {
        self.variants.iter().find(|v| v.variant_id == variant_id)
    }

    pub fn control(&self) -> Option<&Variant> {
        self.variants.first()
    }

    pub fn is_running(&self) -> bool {
        matches!(
            self.state,
            ExperimentState::Active | ExperimentState::Paused
        )
    }
}

/// Applies one lifecycle event.
///
/// Draft→Active, Active→Paused, Paused→Active, Active|Paused→Concluded.
/// Concluded is terminal. Each timestamp is set the first time its state is
/// entered and never overwritten.
pub fn transition(
    experiment: &Experiment,
    event: LifecycleEvent,
    now: Timestamp,
) -> Result<Experiment, ModelError> {
    use ExperimentState::*;
    use LifecycleEvent::*;

    let next = match (experiment.state, event) {
        (Draft, Activate) => Active,
        (Active, Pause) => Paused,
        (Paused, Resume) => Active,
        (Active | Paused, Conclude) => Concluded,
        (from, event) => {
            return Err(ModelError::IllegalTransition {
                from,
                event: event.to_string(),
            })
        }
    };
    let mut out = experiment.clone();
    out.state = next;
    let stamp = match next {
        Active => &mut out.activated_at,
        Paused => &mut out.paused_at,
        Concluded => &mut out.concluded_at,
        Draft => unreachable!("no transition enters Draft"),
    };
    stamp.get_or_insert(now);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn draft() -> Experiment {
        Experiment {
            experiment_id: "exp".into(),
            function_id: "f".into(),
            layer_id: "l".into(),
            eligibility: EligibilityPredicate::default(),
            variants: vec![Variant::control("control")],
            allocation: vec![1.0],
            epoch: 0,
            salt: "s".into(),
            state: ExperimentState::Draft,
            created_at: None,
            activated_at: None,
            paused_at: None,
            concluded_at: None,
            metrics: vec![],
        }
    }

    fn at(s: i64) -> Timestamp {
        chrono::Utc.timestamp_opt(s, 0).unwrap()
    }

    #[test]
    fn activate_sets_timestamp() {
        let e = transition(&draft(), LifecycleEvent::Activate, at(10)).unwrap();
        assert_eq!(e.state, ExperimentState::Active);
        assert_eq!(e.activated_at, Some(at(10)));
    }

    #[test]
    fn resume_keeps_first_activation_time() {
        let e = transition(&draft(), LifecycleEvent::Activate, at(10)).unwrap();
        let e = transition(&e, LifecycleEvent::Pause, at(20)).unwrap();
        let e = transition(&e, LifecycleEvent::Resume, at(30)).unwrap();
        assert_eq!(e.activated_at, Some(at(10)));
        assert_eq!(e.paused_at, Some(at(20)));
    }

    #[test]
    fn concluded_is_terminal() {
        let e = transition(&draft(), LifecycleEvent::Activate, at(1)).unwrap();
        let e = transition(&e, LifecycleEvent::Conclude, at(2)).unwrap();
        assert_eq!(e.concluded_at, Some(at(2)));
        for ev in [
            LifecycleEvent::Activate,
            LifecycleEvent::Pause,
            LifecycleEvent::Resume,
            LifecycleEvent::Conclude,
        ] {
            assert!(matches!(
                transition(&e, ev, at(3)),
                Err(ModelError::IllegalTransition { .. })
            ));
        }
    }

    #[test]
    fn draft_cannot_pause() {
        assert!(transition(&draft(), LifecycleEvent::Pause, at(1)).is_err());
    }

    #[test]
    fn treatment_switch_defaults_to_b() {
        let t = Variant::treatment("t", ParameterSet::new());
        assert_eq!(t.effective_switch(), SwitchPosition::B);
        assert_eq!(Variant::control("c").effective_switch(), SwitchPosition::A);
    }
}
