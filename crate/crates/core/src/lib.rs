//! Solver for stationary weakly coupled mean-field game systems arising in
//! optimal switching.
//!
//! The obstacle-type system is approximated by a penalized system that is
//! solved on a periodic grid by damped Newton inside a continuation in the
//! homotopy parameter and the penalty. The [`limit`] module extracts the
//! switching currents and obstacle diagnostics of the penalty limit, and
//! [`diagnostics`] evaluates the a-priori integral estimates on computed
//! states.

pub mod canonical;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod grid;
pub mod limit;
pub mod model;
pub mod pipeline;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{GridField, GridVectorField, PeriodicGrid};
pub use model::{
    compute_alpha0, validate, CouplingLaw, HamiltonianSpec, ModelSpec, PenaltyFamily, PenaltySpec,
    SwitchingCosts, ValidationReport,
};
pub use solver::{
    continuation_run, initial_state, jacobian, newton_solve, residual, ContinuationSchedule,
    NewtonOptions, SolveReport, SolverState, StepParams,
};
