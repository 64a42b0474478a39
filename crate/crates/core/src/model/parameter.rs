use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{FunctionSpec, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterKind {
    Real,
    Integer,
    Boolean,
    Enumeration,
}

impl fmt::Display for ParameterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParameterKind::Real => "real",
            ParameterKind::Integer => "integer",
            ParameterKind::Boolean => "boolean",
            ParameterKind::Enumeration => "enumeration",
        })
    }
}

/// A parameter value as it appears on the wire: JSON booleans, integers,
/// reals and strings map onto the four parameter kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Boolean(bool),
    Integer(i64),
    Real(f64),
    Enumeration(String),
}

impl ParamValue {
    /// Numeric view used by response models; enumerations have no numeric
    /// meaning and map to 0.
    pub fn as_f64(&self) -> f64 {
        match self {
            ParamValue::Boolean(b) => f64::from(u8::from(*b)),
            ParamValue::Integer(i) => *i as f64,
            ParamValue::Real(x) => *x,
            ParamValue::Enumeration(_) => 0.0,
        }
    }

    fn ordinal(&self) -> Option<f64> {
        match self {
            ParamValue::Integer(i) => Some(*i as f64),
            ParamValue::Real(x) => Some(*x),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Boolean(b) => write!(f, "{b}"),
            ParamValue::Integer(i) => write!(f, "{i}"),
            ParamValue::Real(x) => write!(f, "{x}"),
            ParamValue::Enumeration(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDefinition {
    pub name: String,
    pub kind: ParameterKind,
    pub local_default: ParamValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<ParamValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_bound: Option<ParamValue>,
    #[serde(default)]
    pub legally_governed: bool,
    /// Allowed values for enumeration parameters.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
}

impl ParameterDefinition {
    /// Type-checks `value` against this definition, returning it in canonical
    /// form (integers are widened for real parameters).
    pub fn check(&self, value: &ParamValue) -> Result<ParamValue, ModelError> {
        let mismatch = || ModelError::TypeMismatch {
            parameter: self.name.clone(),
            expected: self.kind.to_string(),
        };
        let value = match (self.kind, value) {
            (ParameterKind::Real, ParamValue::Real(x)) if x.is_finite() => ParamValue::Real(*x),
            (ParameterKind::Real, ParamValue::Integer(i)) => ParamValue::Real(*i as f64),
            (ParameterKind::Integer, ParamValue::Integer(i)) => ParamValue::Integer(*i),
            (ParameterKind::Boolean, ParamValue::Boolean(b)) => ParamValue::Boolean(*b),
            (ParameterKind::Enumeration, ParamValue::Enumeration(s)) => {
                if !self.choices.is_empty() && !self.choices.contains(s) {
                    return Err(ModelError::OutOfBounds {
                        parameter: self.name.clone(),
                        value: s.clone(),
                    });
                }
                ParamValue::Enumeration(s.clone())
            }
            _ => return Err(mismatch()),
        };
        if let Some(x) = value.ordinal() {
            let below = self
                .lower_bound
                .as_ref()
                .and_then(ParamValue::ordinal)
                .is_some_and(|lo| x < lo);
            let above = self
                .upper_bound
                .as_ref()
                .and_then(ParamValue::ordinal)
                .is_some_and(|hi| x > hi);
            if below || above {
                return Err(ModelError::OutOfBounds {
                    parameter: self.name.clone(),
                    value: value.to_string(),
                });
            }
        }
        Ok(value)
    }

    pub(crate) fn validate_definition(&self) -> Result<(), ModelError> {
        let invalid = |msg: &str| {
            Err(ModelError::InvalidDefinition(format!(
                "parameter {:?}: {msg}",
                self.name
            )))
        };
        if self.name.is_empty() {
            return invalid("empty name");
        }
        let numeric = matches!(self.kind, ParameterKind::Real | ParameterKind::Integer);
        if !numeric && (self.lower_bound.is_some() || self.upper_bound.is_some()) {
            return invalid("bounds are only meaningful for real and integer parameters");
        }
        if self.legally_governed
            && numeric
            && (self.lower_bound.is_none() || self.upper_bound.is_none())
        {
            return invalid("legally governed parameters require both bounds");
        }
        if self.kind == ParameterKind::Enumeration
            && self.legally_governed
            && self.choices.is_empty()
        {
            return invalid("legally governed enumerations require explicit choices");
        }
        for bound in [&self.lower_bound, &self.upper_bound].into_iter().flatten() {
            let ok = matches!(
                (self.kind, bound),
                (
                    ParameterKind::Real,
                    ParamValue::Real(_) | ParamValue::Integer(_)
                ) | (ParameterKind::Integer, ParamValue::Integer(_))
            );
            if !ok {
                return invalid("bound type does not match parameter kind");
            }
        }
        if let (Some(lo), Some(hi)) = (
            self.lower_bound.as_ref().and_then(ParamValue::ordinal),
            self.upper_bound.as_ref().and_then(ParamValue::ordinal),
        ) {
            if lo > hi {
                return invalid("lower bound exceeds upper bound");
            }
        }
        self.check(&self.local_default).map_err(|e| {
            ModelError::InvalidDefinition(format!("parameter {:?}: local default: {e}", self.name))
        })?;
        Ok(())
    }
}

/// Named parameter values. Only names declared by the owning function are
/// accepted; see [`ParameterSet::checked`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterSet(BTreeMap<String, ParamValue>);

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from raw values, rejecting unknown names, type mismatches
    /// and bound violations.
    pub fn checked<I, K>(values: I, spec: &FunctionSpec) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (K, ParamValue)>,
        K: Into<String>,
    {
        let raw = ParameterSet(values.into_iter().map(|(k, v)| (k.into(), v)).collect());
        raw.validated(spec)
    }

    /// Returns the canonical form of this set if every entry is valid for `spec`.
    pub fn validated(&self, spec: &FunctionSpec) -> Result<Self, ModelError> {
        let mut out = BTreeMap::new();
        for (name, value) in &self.0 {
            let def = spec
                .parameter(name)
                .ok_or_else(|| ModelError::UnknownParameter(name.clone()))?;
            out.insert(name.clone(), def.check(value)?);
        }
        Ok(ParameterSet(out))
    }

    /// Unchecked construction for values already known to be valid.
    pub(crate) fn from_map(values: BTreeMap<String, ParamValue>) -> Self {
        ParameterSet(values)
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamValue)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Key-by-key merge: entries in `overrides` replace entries in `self`.
    pub fn merged(&self, overrides: &ParameterSet) -> ParameterSet {
        let mut out = self.0.clone();
        for (k, v) in &overrides.0 {
            out.insert(k.clone(), v.clone());
        }
        ParameterSet(out)
    }
}
