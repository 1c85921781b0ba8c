//! Prescribed scalar curvature Yamabe flow on periodic grids.
//!
//! The conformal factor `u` of `g = u^{4/(n-2)} g_0` evolves by
//! `∂_t u = -((n-2)/4)(R_g - f) u` on a flat `n`-torus carrying a negative
//! background curvature `R_0`. Besides the integrator the crate provides the
//! spectral and hypothesis machinery that decides whether the flow is trapped
//! below an explicit supersolution, and diagnostics that check the identities
//! and estimates the flow is supposed to satisfy.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod grid;
pub mod hypothesis;
pub mod operators;
pub mod spectral;

pub use diagnostics::{DiagnosticsRecord, GrowthFit};
pub use error::{Error, Result};
pub use flow::{FlowConfig, FlowRunner, FlowState, Outcome, Trajectory};
pub use grid::{GridSpec, ScalarField, SubdomainMask};
pub use hypothesis::{HypothesisReport, SupersolutionCertificate};
pub use operators::Background;
pub use spectral::EigenResult;
