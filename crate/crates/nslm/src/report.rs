//! Solve outcome: termination status, iterate trace, per-iteration diagnostics.

use nalgebra::DVector;
use serde::Serialize;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TerminationStatus {
    /// `‖f(x_k)‖` fell below the outer tolerance.
    Converged,
    MaxIterations,
    InnerSolverFailure,
    ProjectionFailure,
    /// A non-finite value appeared somewhere in the iteration.
    NumericalBreakdown,
}

impl fmt::Display for TerminationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TerminationStatus::Converged => "converged",
            TerminationStatus::MaxIterations => "max-iterations",
            TerminationStatus::InnerSolverFailure => "inner-solver-failure",
            TerminationStatus::ProjectionFailure => "projection-failure",
            TerminationStatus::NumericalBreakdown => "numerical-breakdown",
        };
        f.write_str(s)
    }
}

/// Diagnostics for one completed outer iteration.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `‖f(x_k)‖` before the step.
    pub residual_norm: f64,
    pub mu: f64,
    /// Inner residual tolerance actually enforced.
    pub zeta: f64,
    /// Recomputed `‖(VᵀV + μI)d + Vᵀf‖` of the accepted inner solution.
    pub inner_residual_norm: f64,
    pub inner_iterations: usize,
    pub step_norm: f64,
    /// Projection tolerance `ε_k` requested from the projection.
    pub epsilon: f64,
    pub projection_iterations: usize,
    /// Final conditional-gradient gap (0 for exact projections).
    pub projection_gap: f64,
    /// Whether the projection exited with its gap certificate.
    pub projection_certified: bool,
    /// `‖x_k − x*‖` when the problem carries a known solution.
    pub error_to_solution: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub status: TerminationStatus,
    pub final_iterate: DVector<f64>,
    /// `‖f‖` at the final iterate.
    pub final_residual_norm: f64,
    /// All iterates, `x_0` through the final point; one longer than `records`.
    pub trace: Vec<DVector<f64>>,
    pub records: Vec<IterationRecord>,
    pub wall_time_s: f64,
}

impl SolveReport {
    pub fn outer_iterations(&self) -> usize {
        self.records.len()
    }

    pub fn converged(&self) -> bool {
        self.status == TerminationStatus::Converged
    }

    /// One-line summary in the benchmark's reporting format.
    pub fn summary_line(&self, n: usize, method: &str) -> String {
        format!(
            "n={} method={} it={} time={:.3} status={}",
            n,
            method,
            self.outer_iterations(),
            self.wall_time_s,
            self.status
        )
    }
}
