//! Feasible inexact projections onto a convex set via the conditional
//! gradient method.
//!
//! A point `z ∈ C` is accepted for target `u` and tolerance `ε` once
//! `⟨u − z, y − z⟩ ≤ ε` for all `y ∈ C`. The loop checks this with a single
//! linear-minimization call per sweep: the oracle vertex `w` maximizes the
//! form, so `⟨u − z, w − z⟩ ≤ ε` certifies the inequality over the whole set.

use crate::set::{FeasibleSet, SetError};
use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

/// Absolute floor on the gap test so that `ε = 0` requests terminate despite
/// rounding; callers wanting a true orthogonal projection should use an exact
/// projector instead.
pub const GAP_FLOOR: f64 = 1e-20;

/// Feasibility tolerance applied to projection start points.
pub const FEASIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProjectionMode {
    Exact,
    Inexact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProjectionStatus {
    /// The exit gap certifies the ε-projection inequality over the set.
    GapSatisfied,
    /// Iteration budget exhausted; the point is feasible but uncertified.
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub point: DVector<f64>,
    /// Last computed gap `⟨u − z, w − z⟩`.
    pub gap: f64,
    /// Number of conditional-gradient steps taken (gap checks excluded).
    pub iterations: usize,
    pub status: ProjectionStatus,
}

impl ProjectionResult {
    pub fn certified(&self) -> bool {
        self.status == ProjectionStatus::GapSatisfied
    }
}

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("start point is not feasible at tolerance {FEASIBILITY_TOL:e}")]
    InfeasibleStart,
    #[error("epsilon must be nonnegative and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("exact projection requested but the set has no exact projector")]
    ExactProjectorUnavailable,
    #[error(transparent)]
    Set(#[from] SetError),
}

/// Conditional-gradient projection of `u` onto the set, started at a feasible
/// `z0`, stopping once the gap certificate reaches `epsilon`.
///
/// Each step moves toward the oracle vertex with the exact line-search step
/// `α = clamp(⟨u − z, w − z⟩ / ‖w − z‖², 0, 1)`, which cannot increase
/// `½‖z − u‖²`.
pub fn condg(
    u: &DVector<f64>,
    z0: &DVector<f64>,
    epsilon: f64,
    set: &dyn FeasibleSet,
    max_iters: usize,
) -> Result<ProjectionResult, ProjectionError> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(ProjectionError::InvalidEpsilon(epsilon));
    }
    if !set.contains(z0, FEASIBILITY_TOL) {
        return Err(ProjectionError::InfeasibleStart);
    }
    let threshold = epsilon.max(GAP_FLOOR);
    let mut z = z0.clone();
    let mut iterations = 0;
    loop {
        let w = set.lmo(&(&z - u))?;
        let gap = (u - &z).dot(&(&w - &z));
        if gap <= threshold {
            return Ok(ProjectionResult {
                point: z,
                gap,
                iterations,
                status: ProjectionStatus::GapSatisfied,
            });
        }
        if iterations >= max_iters {
            return Ok(ProjectionResult {
                point: z,
                gap,
                iterations,
                status: ProjectionStatus::MaxIters,
            });
        }
        let step = &w - &z;
        let step_norm_sq = step.norm_squared();
        // gap > 0 here, so w != z.
        debug_assert!(step_norm_sq > 0.0);
        let alpha = (gap / step_norm_sq).clamp(0.0, 1.0);
        z.axpy(alpha, &step, 1.0);
        iterations += 1;
    }
}

/// Dispatches between the exact projector (a valid ε-projection for any
/// ε ≥ 0, reported with gap 0) and the conditional-gradient loop.
pub fn inexact_project(
    u: &DVector<f64>,
    z0: &DVector<f64>,
    epsilon: f64,
    set: &dyn FeasibleSet,
    mode: ProjectionMode,
    max_iters: usize,
) -> Result<ProjectionResult, ProjectionError> {
    match mode {
        ProjectionMode::Exact => {
            if !set.has_exact_projector() {
                return Err(ProjectionError::ExactProjectorUnavailable);
            }
            let point = set.exact_project(u)?;
            Ok(ProjectionResult {
                point,
                gap: 0.0,
                iterations: 0,
                status: ProjectionStatus::GapSatisfied,
            })
        }
        ProjectionMode::Inexact => condg(u, z0, epsilon, set, max_iters),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::set::SimplexCapSet;
    use nalgebra::dvector;

    #[test]
    fn interior_point_is_a_fixed_point() {
        let set = SimplexCapSet::new(2, 1.0).unwrap();
        let u = dvector![0.1, 0.1];
        let r = condg(&u, &u, 0.0, &set, 100).unwrap();
        assert_eq!(r.point, u);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.gap, 0.0);
        assert!(r.certified());
    }

    #[test]
    fn tight_tolerance_recovers_orthogonal_projection() {
        let set = SimplexCapSet::new(2, 1.0).unwrap();
        let u = dvector![2.0, 2.0];
        let z0 = dvector![0.0, 0.0];
        let r = condg(&u, &z0, 1e-10, &set, 10_000).unwrap();
        assert!(r.certified());
        let exact = set.exact_project(&u).unwrap();
        assert!((r.point - exact).norm() < 1e-4);
    }

    #[test]
    fn loose_tolerance_stays_near_projection() {
        let set = SimplexCapSet::new(2, 1.0).unwrap();
        let u = dvector![2.0, 2.0];
        let z0 = dvector![0.0, 0.0];
        let eps = 0.25;
        let r = condg(&u, &z0, eps, &set, 10_000).unwrap();
        assert!(r.certified());
        assert!(r.gap <= eps);
        let exact = set.exact_project(&u).unwrap();
        assert!((r.point - exact).norm() <= eps.sqrt() + 1e-8);
    }

    #[test]
    fn huge_epsilon_accepts_warm_start() {
        let set = SimplexCapSet::new(2, 1.0).unwrap();
        let u = dvector![2.0, 2.0];
        let z0 = dvector![0.3, 0.3];
        let r = condg(&u, &z0, 1e6, &set, 100).unwrap();
        assert_eq!(r.point, z0);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let set = SimplexCapSet::new(2, 1.0).unwrap();
        let u = dvector![0.5, 0.5];
        let bad = dvector![2.0, 2.0];
        assert!(matches!(
            condg(&u, &bad, 0.1, &set, 100),
            Err(ProjectionError::InfeasibleStart)
        ));
    }

    #[test]
    fn exact_mode_uses_projector_and_reports_zero_gap() {
        let set = SimplexCapSet::new(2, 1.0).unwrap();
        let u = dvector![2.0, 2.0];
        let z0 = dvector![0.0, 0.0];
        let r = inexact_project(&u, &z0, 0.5, &set, ProjectionMode::Exact, 100).unwrap();
        assert_eq!(r.gap, 0.0);
        assert!((r.point - dvector![0.5, 0.5]).norm() < 1e-14);
    }

    #[test]
    fn max_iters_reports_uncertified_feasible_point() {
        let set = SimplexCapSet::new(8, 5.0).unwrap();
        let u = DVector::from_element(8, 10.0);
        let z0 = DVector::zeros(8);
        let r = condg(&u, &z0, 1e-14, &set, 2).unwrap();
        assert_eq!(r.status, ProjectionStatus::MaxIters);
        assert!(set.contains(&r.point, 1e-12));
    }
}
