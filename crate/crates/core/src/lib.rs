//! Numerical maximal regular flows of rough vector fields on open domains.
//!
//! The crate integrates particle trajectories up to their maximal existence
//! time, transports measures along them, and runs quantitative checks on
//! compression, semigroup, stability and blow-up behaviour.

pub mod counterexample;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod field;
pub mod integrator;
pub mod quadrature;
pub mod sampling;
pub mod transport;

pub use domain::{ExhaustionDomain, HittingRecord, Region};
pub use error::{FlowError, Result};
pub use field::{AnalyticShape, DivergenceBound, FieldKind, VectorField, VectorFieldSpec};
