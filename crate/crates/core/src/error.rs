use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants map onto the failure classes the operator tooling distinguishes:
/// contract violations and shape errors are caller bugs, numeric faults abort
/// training, budget errors are resource refusals.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("enumeration budget exceeded: {size} records required, budget is {budget}")]
    Budget { size: u128, budget: u128 },

    #[error("replay buffer not ready: {available} episodes stored, {required} required")]
    NotReady { available: usize, required: usize },

    #[error("precondition not met: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
