use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Vin;

/// Conjunction of clauses over VIN metadata plus an optional allowlist.
///
/// Absent clauses do not constrain; a predicate with no clauses at all matches
/// nothing. A present clause with an empty set also matches nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilityPredicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_codes: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_year_codes: Option<BTreeSet<char>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant_codes: Option<BTreeSet<char>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vin_allowlist: Option<BTreeSet<Vin>>,
}

impl EligibilityPredicate {
    pub fn is_empty(&self) -> bool {
        self.model_codes.is_none()
            && self.model_year_codes.is_none()
            && self.plant_codes.is_none()
            && self.vin_allowlist.is_none()
    }

    pub fn matches(&self, vin: &Vin) -> bool {
        if self.is_empty() {
            return false;
        }
        self.model_codes
            .as_ref()
            .is_none_or(|s| s.contains(vin.model_code()))
            && self
                .model_year_codes
                .as_ref()
                .is_none_or(|s| s.contains(&vin.model_year_code()))
            && self
                .plant_codes
                .as_ref()
                .is_none_or(|s| s.contains(&vin.plant_code()))
            && self.vin_allowlist.as_ref().is_none_or(|s| s.contains(vin))
    }

    pub fn allowlist(vins: impl IntoIterator<Item = Vin>) -> Self {
        EligibilityPredicate {
            vin_allowlist: Some(vins.into_iter().collect()),
            ..Default::default()
        }
    }

    pub fn model_codes<S: Into<String>>(codes: impl IntoIterator<Item = S>) -> Self {
        EligibilityPredicate {
            model_codes: Some(codes.into_iter().map(Into::into).collect()),
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vin(s: &str) -> Vin {
        Vin::parse(s).unwrap()
    }

    #[test]
    fn empty_predicate_matches_nothing() {
        assert!(!EligibilityPredicate::default().matches(&vin("YV1DZ8256C2271234")));
    }

    #[test]
    fn clauses_are_conjunctive() {
        let mut p = EligibilityPredicate::model_codes(["DZ825"]);
        let v = vin("YV1DZ8256C2271234");
        assert!(p.matches(&v));
        p.plant_codes = Some(['2'].into());
        assert!(p.matches(&v));
        p.model_year_codes = Some(['D'].into());
        assert!(!p.matches(&v));
    }

    #[test]
    fn empty_clause_matches_nothing() {
        let p = EligibilityPredicate {
            plant_codes: Some(BTreeSet::new()),
            ..Default::default()
        };
        assert!(!p.matches(&vin("YV1DZ8256C2271234")));
    }

    #[test]
    fn allowlist() {
        let p = EligibilityPredicate::allowlist([vin("YV1DZ8256C2271234")]);
        assert!(p.matches(&vin("YV1DZ8256C2271234")));
        assert!(!p.matches(&vin("YV1DZ8256C2271235")));
    }
}
