use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::{
    Experiment, ExperimentState, FunctionMode, FunctionSpec, ModelError, SwitchPosition,
    VariantLabel,
};

const ALLOCATION_TOLERANCE: f64 = 1e-9;

/// Registered functions (the current software release) and all known experiments.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    pub functions: BTreeMap<String, FunctionSpec>,
    pub experiments: BTreeMap<String, Experiment>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers (or wholesale replaces) a function specification.
    pub fn register_function(&mut self, spec: FunctionSpec) -> Result<(), ModelError> {
        let spec = spec.validate()?;
        self.functions.insert(spec.function_id.clone(), spec);
        Ok(())
    }

    pub fn function(&self, function_id: &str) -> Option<&FunctionSpec> {
        self.functions.get(function_id)
    }

    pub fn active_experiments(&self) -> impl Iterator<Item = &Experiment> {
        self.experiments
            .values()
            .filter(|e| e.state == ExperimentState::Active)
    }
}

/// Parameter names an experiment may change on a vehicle.
///
/// For cloud-tuned functions this is the union of all override names; a
/// time-critical switch swaps the whole set, so it touches every parameter.
pub fn touched_parameters(experiment: &Experiment, spec: &FunctionSpec) -> BTreeSet<String> {
    match spec.mode {
        FunctionMode::CloudTuned => experiment
            .variants
            .iter()
            .flat_map(|v| v.cloud_overrides.names().map(str::to_string))
            .collect(),
        FunctionMode::TimeCritical => spec.parameters.iter().map(|p| p.name.clone()).collect(),
    }
}

/// Returns the experiment (with canonicalized overrides) iff it satisfies
/// every experiment invariant against `registry`.
///
/// Layer conflicts are only checked when the candidate is Active: drafts do
/// not hold their layer.
pub fn validate_experiment(
    candidate: Experiment,
    registry: &Registry,
) -> Result<Experiment, ModelError> {
    let spec = registry
        .function(&candidate.function_id)
        .ok_or_else(|| ModelError::UnknownFunction(candidate.function_id.clone()))?;
    let mut candidate = candidate;

    if candidate.experiment_id.is_empty() || candidate.layer_id.is_empty() {
        return Err(ModelError::InvalidDefinition(
            "experiment_id and layer_id must be non-empty".into(),
        ));
    }
    validate_variants(&mut candidate, spec)?;
    validate_allocation(&candidate)?;

    if candidate.state == ExperimentState::Active {
        let touched = touched_parameters(&candidate, spec);
        for other in registry.active_experiments() {
            if other.experiment_id == candidate.experiment_id
                || other.layer_id != candidate.layer_id
            {
                continue;
            }
            let Some(other_spec) = registry.function(&other.function_id) else {
                continue;
            };
            if let Some(shared) = touched_parameters(other, other_spec)
                .intersection(&touched)
                .next()
            {
                return Err(ModelError::LayerConflict {
                    experiment_id: other.experiment_id.clone(),
                    parameter: shared.clone(),
                });
            }
        }
    }
    Ok(candidate)
}

fn validate_variants(experiment: &mut Experiment, spec: &FunctionSpec) -> Result<(), ModelError> {
    let invalid = |msg: String| Err(ModelError::InvalidVariants(msg));
    if experiment.variants.is_empty() {
        return invalid("at least one variant is required".into());
    }
    let mut ids = HashSet::new();
    for (i, variant) in experiment.variants.iter_mut().enumerate() {
        if variant.variant_id.is_empty() || variant.variant_id == "Local" {
            return invalid(format!(
                "variant id {:?} is reserved or empty",
                variant.variant_id
            ));
        }
        if !ids.insert(variant.variant_id.clone()) {
            return invalid(format!("duplicate variant id {:?}", variant.variant_id));
        }
        match (i, variant.label) {
            (0, VariantLabel::Control) => {
                if !variant.cloud_overrides.is_empty() {
                    return invalid("control carries no cloud overrides".into());
                }
                if variant
                    .switch_position
                    .is_some_and(|p| p != SwitchPosition::A)
                {
                    return invalid("control runs switch position A".into());
                }
            }
            (0, VariantLabel::Treatment) => {
                return invalid("the first variant must be control".into())
            }
            (_, VariantLabel::Control) => {
                return invalid("only the first variant may be control".into())
            }
            (_, VariantLabel::Treatment) => match spec.mode {
                FunctionMode::CloudTuned => {
                    if variant.switch_position.is_some() {
                        return invalid(
                            "switch positions apply to time_critical functions only".into(),
                        );
                    }
                    variant.cloud_overrides = variant.cloud_overrides.validated(spec)?;
                }
                FunctionMode::TimeCritical => {
                    if !variant.cloud_overrides.is_empty() {
                        return invalid(
                            "time_critical treatments select a switch position, not overrides"
                                .into(),
                        );
                    }
                }
            },
        }
    }
    Ok(())
}

fn validate_allocation(experiment: &Experiment) -> Result<(), ModelError> {
    let alloc = &experiment.allocation;
    if alloc.len() != experiment.variants.len() {
        return Err(ModelError::AllocationInvalid(format!(
            "{} fractions for {} variants",
            alloc.len(),
            experiment.variants.len()
        )));
    }
    if let Some(bad) = alloc.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(ModelError::AllocationInvalid(format!(
            "fraction {bad} outside (0, 1]"
        )));
    }
    let sum: f64 = alloc.iter().sum();
    if (sum - 1.0).abs() > ALLOCATION_TOLERANCE {
        return Err(ModelError::AllocationInvalid(format!(
            "fractions sum to {sum}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{
        EligibilityPredicate, ParamValue, ParameterDefinition, ParameterKind, ParameterSet, Variant,
    };
    use super::*;

    fn spec() -> FunctionSpec {
        FunctionSpec {
            function_id: "em".into(),
            parameters: vec![
                ParameterDefinition {
                    name: "soc_target".into(),
                    kind: ParameterKind::Real,
                    local_default: ParamValue::Real(0.6),
                    lower_bound: Some(ParamValue::Real(0.4)),
                    upper_bound: Some(ParamValue::Real(0.9)),
                    legally_governed: true,
                    choices: vec![],
                },
                ParameterDefinition {
                    name: "regen_level".into(),
                    kind: ParameterKind::Integer,
                    local_default: ParamValue::Integer(2),
                    lower_bound: Some(ParamValue::Integer(0)),
                    upper_bound: Some(ParamValue::Integer(3)),
                    legally_governed: false,
                    choices: vec![],
                },
            ],
            observables: vec![],
            mode: FunctionMode::CloudTuned,
            embedded_sets: None,
        }
    }

    fn registry() -> Registry {
        let mut r = Registry::new();
        r.register_function(spec()).unwrap();
        r
    }

    fn experiment(id: &str, overrides: &[(&str, ParamValue)]) -> Experiment {
        let overrides: ParameterSet = serde_json::from_value(serde_json::Value::Object(
            overrides
                .iter()
                .map(|(k, v)| (k.to_string(), serde_json::to_value(v).unwrap()))
                .collect(),
        ))
        .unwrap();
        Experiment {
            experiment_id: id.into(),
            function_id: "em".into(),
            layer_id: "energy".into(),
            eligibility: EligibilityPredicate::model_codes(["DZ825"]),
            variants: vec![
                Variant::control("control"),
                Variant::treatment("treatment", overrides),
            ],
            allocation: vec![0.5, 0.5],
            epoch: 0,
            salt: id.into(),
            state: ExperimentState::Draft,
            created_at: None,
            activated_at: None,
            paused_at: None,
            concluded_at: None,
            metrics: vec![],
        }
    }

    #[test]
    fn well_formed_accepted_unchanged() {
        let e = experiment("e1", &[("soc_target", ParamValue::Real(0.8))]);
        assert_eq!(validate_experiment(e.clone(), &registry()).unwrap(), e);
    }

    #[test]
    fn out_of_bounds_override() {
        let e = experiment("e1", &[("soc_target", ParamValue::Real(0.95))]);
        assert!(matches!(
            validate_experiment(e, &registry()),
            Err(ModelError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn unknown_parameter_and_function() {
        let e = experiment("e1", &[("turbo", ParamValue::Real(1.0))]);
        assert_eq!(
            validate_experiment(e, &registry()),
            Err(ModelError::UnknownParameter("turbo".into()))
        );
        let mut e = experiment("e1", &[]);
        e.function_id = "nope".into();
        assert_eq!(
            validate_experiment(e, &registry()),
            Err(ModelError::UnknownFunction("nope".into()))
        );
    }

    #[test]
    fn allocation_must_sum_to_one() {
        let mut e = experiment("e1", &[]);
        e.allocation = vec![0.5, 0.4];
        assert!(matches!(
            validate_experiment(e.clone(), &registry()),
            Err(ModelError::AllocationInvalid(_))
        ));
        e.allocation = vec![1.0, 0.0];
        assert!(matches!(
            validate_experiment(e.clone(), &registry()),
            Err(ModelError::AllocationInvalid(_))
        ));
        e.allocation = vec![0.5 + 5e-10, 0.5];
        assert!(validate_experiment(e, &registry()).is_ok());
    }

    #[test]
    fn control_overrides_rejected() {
        let mut e = experiment("e1", &[]);
        e.variants[0].cloud_overrides = e.variants[1].cloud_overrides.clone();
        e.variants[0].cloud_overrides.clone_from(
            &ParameterSet::checked([("soc_target", ParamValue::Real(0.5))], &spec()).unwrap(),
        );
        assert!(matches!(
            validate_experiment(e, &registry()),
            Err(ModelError::InvalidVariants(_))
        ));
    }

    #[test]
    fn layer_conflict_between_active_experiments() {
        let mut reg = registry();
        let mut a = experiment("a", &[("soc_target", ParamValue::Real(0.8))]);
        a.state = ExperimentState::Active;
        reg.experiments.insert("a".into(), a);
        let mut b = experiment("b", &[("soc_target", ParamValue::Real(0.7))]);
        b.state = ExperimentState::Active;
        assert_eq!(
            validate_experiment(b.clone(), &reg),
            Err(ModelError::LayerConflict {
                experiment_id: "a".into(),
                parameter: "soc_target".into()
            })
        );
        // A different parameter in the same layer is fine.
        let mut c = experiment("c", &[("regen_level", ParamValue::Integer(1))]);
        c.state = ExperimentState::Active;
        assert!(validate_experiment(c, &reg).is_ok());
        // So is the same parameter in another layer.
        b.layer_id = "other".into();
        assert!(validate_experiment(b, &reg).is_ok());
    }
}
