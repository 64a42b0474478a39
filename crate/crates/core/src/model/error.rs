use thiserror::Error;

use super::ExperimentState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("malformed VIN {0:?}")]
    InvalidVin(String),
    #[error("unknown function {0:?}")]
    UnknownFunction(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("parameter {parameter:?} value {value} outside its bounds")]
    OutOfBounds { parameter: String, value: String },
    #[error("parameter {parameter:?} expects a {expected} value")]
    TypeMismatch { parameter: String, expected: String },
    #[error("invalid allocation: {0}")]
    AllocationInvalid(String),
    #[error("layer conflict with active experiment {experiment_id:?} on parameter {parameter:?}")]
    LayerConflict {
        experiment_id: String,
        parameter: String,
    },
    #[error("cannot {event} an experiment in state {from:?}")]
    IllegalTransition {
        from: ExperimentState,
        event: String,
    },
    #[error("invalid variants: {0}")]
    InvalidVariants(String),
    #[error("invalid definition: {0}")]
    InvalidDefinition(String),
}

impl ModelError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::InvalidVin(_) => "InvalidVin",
            ModelError::UnknownFunction(_) => "UnknownFunction",
            ModelError::UnknownParameter(_) => "UnknownParameter",
            ModelError::OutOfBounds { .. } => "OutOfBounds",
            ModelError::TypeMismatch { .. } => "TypeMismatch",
            ModelError::AllocationInvalid(_) => "AllocationInvalid",
            ModelError::LayerConflict { .. } => "LayerConflict",
            ModelError::IllegalTransition { .. } => "IllegalTransition",
            ModelError::InvalidVariants(_) => "InvalidVariants",
            ModelError::InvalidDefinition(_) => "InvalidDefinition",
        }
    }
}
