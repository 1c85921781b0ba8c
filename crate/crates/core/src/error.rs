use std::path::PathBuf;

use thiserror::Error;

use crate::flow::{FlowState, Trajectory};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("positivity violation: value {value} at index {index}")]
    Positivity { index: usize, value: f64 },

    #[error("background curvature R0 not negative at index {index} (value {value})")]
    NonNegativeBackground { index: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigen solver did not converge after {iterations} iterations (best residual {best_residual:e})")]
    EigenNotConverged { iterations: usize, best_residual: f64 },

    #[error("hypothesis (H1) not satisfied: {0}")]
    H1Violated(String),

    #[error("H2 violated: empty delta window [{delta_lo}, {delta_hi}] (C_Omega = {c_omega})")]
    H2Violated {
        delta_lo: f64,
        delta_hi: f64,
        c_omega: f64,
    },

    #[error("supersolution rejected: min L(ubar) = {min_l_ubar:e} below tolerance {tolerance:e}")]
    CertificateRejected { min_l_ubar: f64, tolerance: f64 },

    #[error("positivity collapse at t = {} after {halvings} step halvings", .state.t)]
    PositivityCollapse {
        halvings: u32,
        state: Box<FlowState>,
    },

    #[error("flow step failed at t = {}: {source}", .partial.final_state.t)]
    StepFailed {
        source: Box<Error>,
        partial: Box<Trajectory>,
    },

    #[error("trajectory too short: {got} records, need at least {need}")]
    TooShort { need: usize, got: usize },

    #[error("states are not equally spaced in time ({first} vs {second})")]
    UnequalSpacing { first: f64, second: f64 },

    #[error("insufficient time span for growth fit: {0}")]
    InsufficientSpan(String),

    #[error("snapshot format error in {path}: {reason}")]
    Snapshot { path: PathBuf, reason: String },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
