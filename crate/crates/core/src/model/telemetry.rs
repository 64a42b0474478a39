use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Name, ObservableKind, Timestamp, Vin};

/// Which arm produced a record: a variant id, or `Local` when the vehicle ran
/// its shipped defaults outside any experiment session.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantTag {
    Local,
    Variant(Name),
}

impl VariantTag {
    pub const LOCAL: &'static str = "Local";

    pub fn as_str(&self) -> &str {
        match self {
            VariantTag::Local => Self::LOCAL,
            VariantTag::Variant(v) => v,
        }
    }

    pub fn is_local(&self) -> bool {
        matches!(self, VariantTag::Local)
    }

    pub fn parse(s: &str) -> Self {
        if s == Self::LOCAL {
            VariantTag::Local
        } else {
            VariantTag::Variant(Name::from(s))
        }
    }
}

impl fmt::Display for VariantTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for VariantTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for VariantTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        Ok(VariantTag::parse(&raw))
    }
}

/// One measured observable value. `(vin, trip_id, sequence_number)` is the
/// idempotency key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub vin: Vin,
    pub trip_id: Name,
    pub sequence_number: u64,
    pub timestamp: Timestamp,
    pub observable: Name,
    pub value: f64,
    pub unit: Name,
    pub variant: VariantTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment_id: Option<Name>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
    pub kind: ObservableKind,
}

impl TelemetryRecord {
    pub fn key(&self) -> (Vin, Name, u64) {
        (self.vin.clone(), self.trip_id.clone(), self.sequence_number)
    }
}
