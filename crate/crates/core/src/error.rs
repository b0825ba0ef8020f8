use thiserror::Error;

/// Errors shared across the library.
///
/// Exhaustion and budget overruns are the two failure modes of lazy
/// evaluation: a recorded stream ran out of data, or an almost-surely
/// terminating refinement loop hit its configured cap (which signals a
/// measure-zero input such as a tie in an exact comparison).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("recorded stream exhausted at position {position} (length {length})")]
    Exhausted { position: u128, length: usize },

    #[error("refinement budget of {budget} exceeded in {context}")]
    BudgetExceeded { budget: u64, context: &'static str },

    #[error("degenerate parameters: {0}")]
    DegenerateParams(String),

    #[error("window length mismatch: expected {expected}, got {got}")]
    WindowMismatch { expected: usize, got: usize },

    #[error("feasibility guard: {0}")]
    FeasibilityGuard(String),

    #[error("index overflow while composing stream allocations")]
    IndexOverflow,

    #[error("state space too large for exact enumeration: {0}")]
    StateSpaceGuard(String),

    #[error("conditioning event has probability zero")]
    EmptyConditioning,

    #[error("support mismatch between distributions")]
    SupportMismatch,

    #[error("windows do not cover the required range: {0}")]
    Coverage(String),

    #[error("cell with expected count below threshold: {0}")]
    SparseCell(String),

    #[error("insufficient samples: need at least {need}, got {got}")]
    InsufficientSamples { need: u64, got: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("max_level {max_level} insufficient for delta {delta}")]
    MaxLevelInsufficient { max_level: u32, delta: String },
}

pub type Result<T> = std::result::Result<T, Error>;
