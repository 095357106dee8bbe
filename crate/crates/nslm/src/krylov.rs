//! Matrix-free solution of the regularized normal equations
//! `(VᵀV + μI)d = −Vᵀf` with a certified residual bound.
//!
//! The Krylov method is BiCGSTAB. Its recursively updated residual is used
//! only to drive the recurrences; the stop test recomputes the true residual
//! `rhs − op(d)` every iteration (one extra operator application), so a
//! `Converged` result always carries an exact `‖r‖ ≤ ζ` certificate.

use crate::problem::JacobianOperator;
use nalgebra::{DMatrix, DVector};
use std::sync::atomic::{AtomicUsize, Ordering};
use thiserror::Error;

/// Denominator magnitude below which a BiCGSTAB scalar counts as a breakdown.
pub const BREAKDOWN_EPS: f64 = 1e-30;

/// Dense materialization budget for the direct path.
pub const DENSE_DIM_LIMIT: usize = 500;

#[derive(Debug, Error)]
pub enum LinearSolveError {
    #[error("regularization must be positive, got {0}")]
    InvalidRegularization(f64),
    #[error("residual tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("operator dimension {0} exceeds the dense budget {DENSE_DIM_LIMIT}")]
    DenseBudgetExceeded(usize),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("direct solve residual {0:e} exceeds the accuracy contract")]
    DirectSolveInaccurate(f64),
}

/// The symmetric positive definite operator `v ↦ Vᵀ(Vv) + μv`. Each
/// application costs exactly one forward and one transpose application of
/// the underlying Jacobian element; applications are counted for the cost
/// assertions in tests.
pub struct RegularizedNormalOperator<'a> {
    jacobian: &'a dyn JacobianOperator,
    mu: f64,
    applications: AtomicUsize,
}

impl<'a> RegularizedNormalOperator<'a> {
    pub fn new(jacobian: &'a dyn JacobianOperator, mu: f64) -> Result<Self, LinearSolveError> {
        if !mu.is_finite() || mu <= 0.0 {
            return Err(LinearSolveError::InvalidRegularization(mu));
        }
        Ok(Self {
            jacobian,
            mu,
            applications: AtomicUsize::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.jacobian.ncols()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.applications.fetch_add(1, Ordering::Relaxed);
        let mut out = self.jacobian.apply_transpose(&self.jacobian.apply(v));
        out.axpy(self.mu, v, 1.0);
        out
    }

    pub fn applications(&self) -> usize {
        self.applications.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerStatus {
    Converged,
    MaxIters,
    Breakdown,
}

#[derive(Debug, Clone)]
pub struct InnerSolveResult {
    pub solution: DVector<f64>,
    /// Achieved residual vector `(VᵀV + μI)d + Vᵀf`, i.e. `op(d) − rhs`.
    pub residual: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub status: InnerStatus,
}

impl InnerSolveResult {
    pub fn converged(&self) -> bool {
        self.status == InnerStatus::Converged
    }
}

fn result_from(
    op: &RegularizedNormalOperator,
    rhs: &DVector<f64>,
    solution: DVector<f64>,
    iterations: usize,
    status: InnerStatus,
) -> InnerSolveResult {
    let residual = op.apply(&solution) - rhs;
    let residual_norm = residual.norm();
    InnerSolveResult {
        solution,
        residual,
        residual_norm,
        iterations,
        status,
    }
}

/// BiCGSTAB from the zero start vector.
pub fn bicgstab(
    op: &RegularizedNormalOperator,
    rhs: &DVector<f64>,
    zeta: f64,
    max_iters: usize,
) -> InnerSolveResult {
    bicgstab_from(op, rhs, DVector::zeros(rhs.len()), zeta, max_iters)
}

/// BiCGSTAB from an arbitrary start, used for the one restart the solver
/// attempts before falling back to the dense path.
pub fn bicgstab_from(
    op: &RegularizedNormalOperator,
    rhs: &DVector<f64>,
    x0: DVector<f64>,
    zeta: f64,
    max_iters: usize,
) -> InnerSolveResult {
    assert!(zeta > 0.0, "residual tolerance must be positive");
    let mut x = x0;
    let mut r = rhs - op.apply(&x);
    if r.norm() <= zeta {
        return result_from(op, rhs, x, 0, InnerStatus::Converged);
    }
    let r_shadow = r.clone();
    let mut rho_prev = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = DVector::zeros(rhs.len());
    let mut p = DVector::zeros(rhs.len());

    for it in 1..=max_iters {
        let rho = r_shadow.dot(&r);
        if rho.abs() < BREAKDOWN_EPS {
            return result_from(op, rhs, x, it - 1, InnerStatus::Breakdown);
        }
        if it == 1 {
            p.copy_from(&r);
        } else {
            let beta = (rho / rho_prev) * (alpha / omega);
            // p = r + beta (p - omega v)
            p.axpy(-omega, &v, 1.0);
            p *= beta;
            p += &r;
        }
        v = op.apply(&p);
        let rv = r_shadow.dot(&v);
        if rv.abs() < BREAKDOWN_EPS {
            return result_from(op, rhs, x, it - 1, InnerStatus::Breakdown);
        }
        alpha = rho / rv;
        let s = &r - &(&v * alpha);
        if s.norm() <= zeta {
            let candidate = &x + &(&p * alpha);
            let true_res = rhs - op.apply(&candidate);
            if true_res.norm() <= zeta {
                return InnerSolveResult {
                    solution: candidate,
                    residual_norm: true_res.norm(),
                    residual: -true_res,
                    iterations: it,
                    status: InnerStatus::Converged,
                };
            }
        }
        let t = op.apply(&s);
        let tt = t.dot(&t);
        if tt.abs() < BREAKDOWN_EPS {
            return result_from(op, rhs, x, it - 1, InnerStatus::Breakdown);
        }
        omega = t.dot(&s) / tt;
        if omega.abs() < BREAKDOWN_EPS {
            return result_from(op, rhs, x, it - 1, InnerStatus::Breakdown);
        }
        x.axpy(alpha, &p, 1.0);
        x.axpy(omega, &s, 1.0);
        // Recursive residual keeps the recurrences cheap; the stop test below
        // uses the recomputed one.
        r = s - &t * omega;
        let true_res = rhs - op.apply(&x);
        if true_res.norm() <= zeta {
            return InnerSolveResult {
                residual_norm: true_res.norm(),
                residual: -true_res,
                solution: x,
                iterations: it,
                status: InnerStatus::Converged,
            };
        }
        if !r.iter().all(|c| c.is_finite()) {
            return result_from(op, rhs, x, it, InnerStatus::Breakdown);
        }
        rho_prev = rho;
    }
    result_from(op, rhs, x, max_iters, InnerStatus::MaxIters)
}

/// Direct Cholesky solve on the materialized operator, with one step of
/// iterative refinement. Intended as the test oracle and as the last-resort
/// fallback for small systems.
pub fn dense_direct_solve(
    op: &RegularizedNormalOperator,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>, LinearSolveError> {
    let n = op.dim();
    if n > DENSE_DIM_LIMIT {
        return Err(LinearSolveError::DenseBudgetExceeded(n));
    }
    if op.mu() <= 0.0 {
        return Err(LinearSolveError::InvalidRegularization(op.mu()));
    }
    let mut dense = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        dense.set_column(j, &op.apply(&e));
    }
    let chol = dense
        .clone()
        .cholesky()
        .ok_or(LinearSolveError::NotPositiveDefinite)?;
    let mut x = chol.solve(rhs);
    let correction = chol.solve(&(rhs - &dense * &x));
    x += correction;
    let rel = (rhs - &dense * &x).norm() / rhs.norm().max(1.0);
    if rel > 1e-10 {
        return Err(LinearSolveError::DirectSolveInaccurate(rel));
    }
    Ok(x)
}

/// Inner-solve driver: BiCGSTAB, one warm restart on failure, then the dense
/// direct path when the system is small enough. `None` means the step could
/// not be produced within the residual certificate.
pub fn solve_inner_system(
    op: &RegularizedNormalOperator,
    rhs: &DVector<f64>,
    zeta: f64,
    max_iters: usize,
) -> Option<InnerSolveResult> {
    let first = bicgstab(op, rhs, zeta, max_iters);
    if first.converged() {
        return Some(first);
    }
    let spent = first.iterations;
    let second = bicgstab_from(op, rhs, first.solution, zeta, max_iters);
    if second.converged() {
        return Some(InnerSolveResult {
            iterations: spent + second.iterations,
            ..second
        });
    }
    if op.dim() <= DENSE_DIM_LIMIT {
        if let Ok(solution) = dense_direct_solve(op, rhs) {
            let residual = op.apply(&solution) - rhs;
            let residual_norm = residual.norm();
            if residual_norm <= zeta {
                return Some(InnerSolveResult {
                    solution,
                    residual,
                    residual_norm,
                    iterations: spent + second.iterations,
                    status: InnerStatus::Converged,
                });
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{random_dense, CountingJacobian, DenseJacobian};
    use nalgebra::dvector;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_operator_reduces_to_identity() {
        let zero = DenseJacobian::new(DMatrix::zeros(2, 2));
        let op = RegularizedNormalOperator::new(&zero, 1.0).unwrap();
        let rhs = dvector![3.0, 4.0];
        let out = bicgstab(&op, &rhs, 1e-12, 50);
        assert!(out.converged());
        assert_eq!(out.iterations, 1);
        assert!((out.solution - rhs).norm() < 1e-12);
    }

    #[test]
    fn zero_rhs_converges_immediately() {
        let j = DenseJacobian::new(random_dense(5, 5, &mut ChaCha8Rng::seed_from_u64(1)));
        let op = RegularizedNormalOperator::new(&j, 0.5).unwrap();
        let out = bicgstab(&op, &DVector::zeros(5), 1e-10, 50);
        assert!(out.converged());
        assert_eq!(out.iterations, 0);
        assert_eq!(out.solution, DVector::zeros(5));
    }

    #[test]
    fn agrees_with_dense_oracle_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = random_dense(20, 20, &mut rng);
        let f = DVector::from_fn(20, |_, _| 1.0);
        let j = DenseJacobian::new(v);
        let mu = 0.5;
        let op = RegularizedNormalOperator::new(&j, mu).unwrap();
        let rhs = -j.matrix().transpose() * &f;
        let zeta = 1e-9;
        let out = bicgstab(&op, &rhs, zeta, 2000);
        assert!(out.converged());
        assert!(out.residual_norm <= zeta);
        let oracle = dense_direct_solve(&op, &rhs).unwrap();
        assert!((out.solution - oracle).norm() <= zeta / mu);
    }

    #[test]
    fn direct_oracle_scalar_cases() {
        // V = I (n = 2), mu = 1: (I + I) d = rhs.
        let j = DenseJacobian::new(DMatrix::identity(2, 2));
        let op = RegularizedNormalOperator::new(&j, 1.0).unwrap();
        let d = dense_direct_solve(&op, &dvector![1.0, 0.0]).unwrap();
        assert!((d - dvector![0.5, 0.0]).norm() < 1e-14);

        // n = 1, V = (2), mu = 1, f = (1): (4 + 1) d = -2.
        let j1 = DenseJacobian::new(DMatrix::from_element(1, 1, 2.0));
        let op1 = RegularizedNormalOperator::new(&j1, 1.0).unwrap();
        let d1 = dense_direct_solve(&op1, &dvector![-2.0]).unwrap();
        assert!((d1[0] - (-0.4)).abs() < 1e-14);
    }

    #[test]
    fn direct_oracle_verifies_quadratic_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = random_dense(15, 15, &mut rng);
        let f = DVector::from_fn(15, |i, _| (i as f64 * 0.3).sin());
        let j = DenseJacobian::new(v.clone());
        let mu = 0.7;
        let op = RegularizedNormalOperator::new(&j, mu).unwrap();
        let rhs = -v.transpose() * &f;
        let d = dense_direct_solve(&op, &rhs).unwrap();
        // gradient of ‖f + Vd‖² + mu‖d‖² at the solution
        let grad = (v.transpose() * (&v * &d) + &d * mu + v.transpose() * &f) * 2.0;
        assert!(grad.norm() <= 1e-8);
    }

    #[test]
    fn direct_oracle_solution_is_unique_under_perturbed_assembly() {
        // Strong convexity: solving twice (second time through the iterative
        // path from a random start) lands on the same minimizer.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let v = random_dense(12, 12, &mut rng);
        let j = DenseJacobian::new(v);
        let op = RegularizedNormalOperator::new(&j, 0.9).unwrap();
        let rhs = DVector::from_fn(12, |i, _| 1.0 / (i as f64 + 1.0));
        let a = dense_direct_solve(&op, &rhs).unwrap();
        let start = DVector::from_fn(12, |i, _| (i as f64).cos());
        let b = bicgstab_from(&op, &rhs, start, 1e-13, 4000);
        assert!(b.converged());
        assert!((a - b.solution).norm() < 1e-10);
    }

    #[test]
    fn invalid_regularization_is_rejected() {
        let j = DenseJacobian::new(DMatrix::identity(2, 2));
        assert!(matches!(
            RegularizedNormalOperator::new(&j, 0.0),
            Err(LinearSolveError::InvalidRegularization(_))
        ));
        assert!(matches!(
            RegularizedNormalOperator::new(&j, -1.0),
            Err(LinearSolveError::InvalidRegularization(_))
        ));
    }

    #[test]
    fn residual_norm_field_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_dense(10, 10, &mut rng);
        let j = DenseJacobian::new(v);
        let op = RegularizedNormalOperator::new(&j, 0.3).unwrap();
        let rhs = DVector::from_fn(10, |i, _| (i as f64) - 4.5);
        let out = bicgstab(&op, &rhs, 1e-8, 1000);
        assert!(out.converged());
        let recomputed = (op.apply(&out.solution) - &rhs).norm();
        let scale = recomputed.max(out.residual_norm).max(f64::MIN_POSITIVE);
        assert!((recomputed - out.residual_norm).abs() / scale <= 1e-12);
    }

    #[test]
    fn each_operator_application_costs_two_jacobian_applications() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_dense(8, 8, &mut rng);
        let counted = CountingJacobian::new(DenseJacobian::new(v));
        let op = RegularizedNormalOperator::new(&counted, 0.4).unwrap();
        let rhs = DVector::from_element(8, 1.0);
        let _ = bicgstab(&op, &rhs, 1e-10, 500);
        assert_eq!(counted.forward_count() + counted.transpose_count(), 2 * op.applications());
        assert_eq!(counted.forward_count(), counted.transpose_count());
    }

    #[test]
    fn max_iters_reports_honestly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_dense(30, 30, &mut rng);
        let j = DenseJacobian::new(v);
        let op = RegularizedNormalOperator::new(&j, 1e-6).unwrap();
        let rhs = DVector::from_element(30, 1.0);
        let out = bicgstab(&op, &rhs, 1e-14, 2);
        assert_eq!(out.status, InnerStatus::MaxIters);
        assert!(out.residual_norm > 1e-14);
    }

    #[test]
    fn driver_falls_back_to_dense_when_krylov_is_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v = random_dense(25, 25, &mut rng);
        let j = DenseJacobian::new(v);
        let op = RegularizedNormalOperator::new(&j, 0.2).unwrap();
        let rhs = DVector::from_element(25, 2.0);
        let out = solve_inner_system(&op, &rhs, 1e-10, 1).expect("dense fallback");
        assert!(out.converged());
        assert!(out.residual_norm <= 1e-10);
    }
}
