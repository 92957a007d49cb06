use thiserror::Error;

/// Errors produced by layout validation, plan construction, simulation, and
/// execution.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("tensor volume overflows 64-bit addressing")]
    VolumeOverflow,

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("invalid multi-index: {0}")]
    InvalidMultiIndex(String),

    #[error("dimension label {label} out of range for rank {rank}")]
    LabelOutOfRange { label: usize, rank: usize },

    #[error("dimension label {label} not present in the given ordering")]
    LabelNotInOrdering { label: usize },

    #[error("coordinate {coord} out of range for dimension {dim} (extent {extent})")]
    CoordOutOfRange { dim: usize, coord: u64, extent: u64 },

    #[error("position {pos} out of range (volume {vol})")]
    PositionOutOfRange { pos: u64, vol: u64 },

    #[error("lane term count {terms} exceeds lane count {lanes}")]
    TooManyLaneTerms { terms: usize, lanes: usize },

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("plan does not match the supplied tensor: {0}")]
    PlanMismatch(String),

    #[error("volume {vol} exceeds the exact-simulation cap {cap}; use heuristic selection")]
    VolumeOverCap { vol: u64, cap: u64 },

    #[error("plan schedule wrote output position {pos} {count} times")]
    CoverageViolation { pos: u64, count: u64 },

    #[error("invalid device profile: {0}")]
    InvalidProfile(String),

    #[error("invalid model input: {0}")]
    InvalidModelInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
