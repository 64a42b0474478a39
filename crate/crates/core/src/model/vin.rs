use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ModelError;

/// A 17-character vehicle identification number.
///
/// Metadata (model, model year, plant) is never stored separately; the
/// accessors project it out of the identifier.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vin(Arc<str>);

impl Vin {
    pub const LEN: usize = 17;

    pub fn parse(value: &str) -> Result<Self, ModelError> {
        if value.len() != Self::LEN || !value.bytes().all(is_vin_char) {
            return Err(ModelError::InvalidVin(value.to_string()));
        }
        Ok(Vin(Arc::from(value)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Positions 4-8: vehicle descriptor (model code).
    pub fn model_code(&self) -> &str {
        &self.0[3..8]
    }

    /// Position 10.
    pub fn model_year_code(&self) -> char {
        self.0.as_bytes()[9] as char
    }

    /// Position 11.
    pub fn plant_code(&self) -> char {
        self.0.as_bytes()[10] as char
    }
}

/// Digits and uppercase letters except I, O and Q.
pub(crate) fn is_vin_char(b: u8) -> bool {
    b.is_ascii_digit() || (b.is_ascii_uppercase() && !matches!(b, b'I' | b'O' | b'Q'))
}

impl fmt::Display for Vin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Vin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vin({})", self.0)
    }
}

impl std::str::FromStr for Vin {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Vin::parse(s)
    }
}

impl Serialize for Vin {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Vin {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        Vin::parse(&raw).map_err(serde::de::Error::custom)
    }
}
