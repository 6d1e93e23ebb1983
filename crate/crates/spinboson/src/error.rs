//! Crate-wide error type.

/// Errors shared across the simulation and fitting modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A dimension argument is out of the supported range.
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    /// A physical parameter is outside its domain (negative rate, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two objects that must share a dimension do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A tensor-slot index does not exist in the layout.
    #[error("slot {slot} out of range for layout with {n_slots} slots")]
    SlotOutOfRange { slot: usize, n_slots: usize },

    /// A state failed validation (hermiticity, trace, norm, positivity).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// An integrator did not reach its convergence target.
    #[error("integration failure: {0}")]
    IntegrationFailure(String),

    /// A root bracket or scan bracket could not be established.
    #[error("no bracket: {0}")]
    NoBracket(String),

    /// An optimizer ran out of its evaluation budget before meeting its goal.
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),

    /// Time arguments violate a required ordering.
    #[error("time ordering violated: {0}")]
    OrderingViolation(String),

    /// A pulse schedule is malformed or cannot be realized.
    #[error("schedule error: {0}")]
    Schedule(String),

    /// A fit problem is malformed (empty target, bad bounds, ...).
    #[error("fit setup error: {0}")]
    FitSetup(String),

    /// One member of a trial ensemble failed; the index identifies it.
    #[error("trial {trial}: {source}")]
    TrialFailure { trial: usize, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;
