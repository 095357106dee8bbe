//! Solver library for constrained nonsmooth equations `f(x) = 0, x ∈ C`,
//! built around a projected inexact Levenberg-Marquardt iteration.
//!
//! The outer loop regularizes each linearized step with
//! `μ_k = η‖V_kᵀf(x_k)‖^σ`, solves the normal equations matrix-free with
//! BiCGSTAB under a certified residual bound, and returns to the feasible
//! set either through an exact Euclidean projection or through a
//! conditional-gradient (Frank-Wolfe) inexact projection with an
//! `ε_k = θ_k²‖d_k‖²` gap certificate.
//!
//! The [`cave`] module ships the benchmark problem family, constrained
//! absolute value equations `Ax − |x| = b` over `{x ≥ 0, Σxᵢ ≤ d}`, with a
//! seeded generator whose planted solutions make convergence measurable.
//!
//! ```
//! use nslm::cave::{generate_instance, CaveProblem};
//! use nslm::{solve, SolverConfig};
//! use std::sync::Arc;
//!
//! let instance = generate_instance(50, 0.1, 7).unwrap();
//! let x0 = instance.default_start();
//! let problem = CaveProblem::new(Arc::new(instance)).unwrap();
//! let report = solve(&problem, &x0, &SolverConfig::default()).unwrap();
//! assert!(report.converged());
//! ```

pub mod cave;
pub mod config;
pub mod krylov;
pub mod problem;
pub mod projection;
pub mod report;
pub mod set;
pub mod solver;
pub mod sparse;
pub mod testing;

pub use config::{ConfigError, SolverConfig, ThetaSchedule};
pub use problem::{validate, Diagnostic, JacobianOperator, Problem};
pub use projection::{condg, inexact_project, ProjectionMode, ProjectionResult, ProjectionStatus};
pub use report::{IterationRecord, SolveReport, TerminationStatus};
pub use set::{FeasibleSet, SetError, SimplexCapSet};
pub use solver::{
    estimate_convergence_order, regularization_mu, residual_tolerance_zeta, solve,
    OrderEstimateError, SolveError,
};
