//! Outer loop: projected inexact Levenberg-Marquardt iteration with feasible
//! (exact or inexact) projections, plus the convergence-order diagnostic.

use crate::config::{ConfigError, SolverConfig};
use crate::krylov::{solve_inner_system, RegularizedNormalOperator};
use crate::problem::{JacobianOperator, Problem};
use crate::projection::{inexact_project, ProjectionMode, FEASIBILITY_TOL};
use crate::report::{IterationRecord, SolveReport, TerminationStatus};
use nalgebra::DVector;
use std::time::Instant;
use thiserror::Error;

/// Lower clamp on the inner residual tolerance, keeping the Krylov stop test
/// meaningful once `‖f‖` approaches the floating-point floor.
pub const ZETA_MIN: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("start point is not feasible at tolerance {FEASIBILITY_TOL:e}")]
    InfeasibleStart,
    #[error("start point length {got} does not match problem dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    InvalidConfig(#[from] ConfigError),
}

/// Regularization weight `μ = max(η‖Vᵀf‖^σ, μ_floor)`.
pub fn regularization_mu(
    jacobian: &dyn JacobianOperator,
    f_val: &DVector<f64>,
    eta: f64,
    sigma: f64,
    mu_floor: f64,
) -> f64 {
    mu_from_gradient_norm(jacobian.apply_transpose(f_val).norm(), eta, sigma, mu_floor)
}

fn mu_from_gradient_norm(gradient_norm: f64, eta: f64, sigma: f64, mu_floor: f64) -> f64 {
    (eta * gradient_norm.powf(sigma)).max(mu_floor)
}

/// Inner residual tolerance `ζ = μ · min(ν̄, c‖f‖^{σ/2}) · c‖f‖`, clamped
/// below by [`ZETA_MIN`]. With `c = ν̄ = 1` this is `μ‖f‖^{1+σ/2}`, a
/// residual-norm surrogate for the (unobservable) distance to the solution
/// set that the inexactness theory is stated in.
pub fn residual_tolerance_zeta(mu: f64, f_norm: f64, sigma: f64, gain: f64, nu_cap: f64) -> f64 {
    let nu = nu_cap.min(gain * f_norm.powf(sigma / 2.0));
    (mu * nu * gain * f_norm).max(ZETA_MIN)
}

fn all_finite(x: &DVector<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Runs the projected inexact Levenberg-Marquardt iteration from a feasible
/// start point.
///
/// Per iteration: evaluate `f(x_k)` and stop below `outer_tol`; select a
/// generalized-derivative element `V_k`; set `μ_k` and the inner tolerance
/// `ζ_k`; solve `(V_kᵀV_k + μ_k I)d = −V_kᵀf(x_k)` to `‖r_k‖ ≤ ζ_k`; set
/// `ε_k = θ_k²‖d_k‖²` and project `x_k + d_k` back onto the feasible set.
///
/// The inner tolerance is additionally capped at
/// `residual_rel_cap · ‖V_kᵀf(x_k)‖`: far from a root the schedule's
/// `‖f‖^{1+σ/2}` factor can exceed the right-hand side itself, and without
/// the cap the inner solver would accept `d = 0` and stall.
///
/// A projection that runs out of iterations without its gap certificate is
/// accepted as a feasible best-effort point (and recorded as uncertified)
/// unless `strict_projection` is set.
pub fn solve(
    problem: &dyn Problem,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolveReport, SolveError> {
    config.validate()?;
    if x0.len() != problem.dim() {
        return Err(SolveError::DimensionMismatch {
            expected: problem.dim(),
            got: x0.len(),
        });
    }
    let set = problem.feasible_set();
    if !set.contains(x0, FEASIBILITY_TOL) {
        return Err(SolveError::InfeasibleStart);
    }

    let started = Instant::now();
    let mut x = x0.clone();
    let mut trace = vec![x.clone()];
    let mut records: Vec<IterationRecord> = Vec::new();
    let error_to = |x: &DVector<f64>| problem.known_solution().map(|s| (x - s).norm());

    let finish = |status: TerminationStatus,
                  x: DVector<f64>,
                  final_residual_norm: f64,
                  trace: Vec<DVector<f64>>,
                  records: Vec<IterationRecord>| {
        Ok(SolveReport {
            status,
            final_iterate: x,
            final_residual_norm,
            trace,
            records,
            wall_time_s: started.elapsed().as_secs_f64(),
        })
    };

    for k in 0..config.max_outer_iters {
        let f = problem.residual(&x);
        if !all_finite(&f) {
            let norm = f.norm();
            return finish(TerminationStatus::NumericalBreakdown, x, norm, trace, records);
        }
        let f_norm = f.norm();
        if f_norm < config.outer_tol {
            return finish(TerminationStatus::Converged, x, f_norm, trace, records);
        }

        let jacobian = problem.jacobian_element(&x);
        let gradient = jacobian.apply_transpose(&f);
        let gradient_norm = gradient.norm();
        let mu = mu_from_gradient_norm(gradient_norm, config.eta, config.sigma, config.mu_floor);
        let zeta_schedule =
            residual_tolerance_zeta(mu, f_norm, config.sigma, config.residual_gain, config.nu_cap);
        let zeta = zeta_schedule
            .min(config.residual_rel_cap * gradient_norm)
            .max(ZETA_MIN);

        let op = match RegularizedNormalOperator::new(jacobian.as_ref(), mu) {
            Ok(op) => op,
            Err(_) => {
                return finish(TerminationStatus::NumericalBreakdown, x, f_norm, trace, records)
            }
        };
        let rhs = -&gradient;
        let inner = match solve_inner_system(&op, &rhs, zeta, config.max_inner_iters) {
            Some(inner) => inner,
            None => {
                return finish(TerminationStatus::InnerSolverFailure, x, f_norm, trace, records)
            }
        };
        let step = inner.solution;
        if !all_finite(&step) {
            return finish(TerminationStatus::NumericalBreakdown, x, f_norm, trace, records);
        }
        let step_norm = step.norm();
        let theta_k = config.theta_schedule.theta_k(config.theta, k);
        let epsilon = match config.projection_mode {
            ProjectionMode::Exact => 0.0,
            ProjectionMode::Inexact => theta_k * theta_k * step_norm * step_norm,
        };

        let target = &x + &step;
        let warm = match config.projection_mode {
            ProjectionMode::Exact => x.clone(),
            ProjectionMode::Inexact => set
                .projection_warm_start(&target)
                .filter(|z| set.contains(z, FEASIBILITY_TOL))
                .unwrap_or_else(|| x.clone()),
        };
        let projection = match inexact_project(
            &target,
            &warm,
            epsilon,
            set,
            config.projection_mode,
            config.max_projection_iters,
        ) {
            Ok(p) => p,
            Err(_) => {
                return finish(TerminationStatus::ProjectionFailure, x, f_norm, trace, records)
            }
        };
        if !all_finite(&projection.point) || !set.contains(&projection.point, FEASIBILITY_TOL) {
            return finish(TerminationStatus::ProjectionFailure, x, f_norm, trace, records);
        }
        if config.strict_projection && !projection.certified() {
            return finish(TerminationStatus::ProjectionFailure, x, f_norm, trace, records);
        }

        #[cfg(debug_assertions)]
        if config.projection_mode == ProjectionMode::Inexact {
            verify_projection_certificate(set, &target, &projection, epsilon);
        }

        records.push(IterationRecord {
            k,
            residual_norm: f_norm,
            mu,
            zeta,
            inner_residual_norm: inner.residual_norm,
            inner_iterations: inner.iterations,
            step_norm,
            epsilon,
            projection_iterations: projection.iterations,
            projection_gap: projection.gap,
            projection_certified: projection.certified(),
            error_to_solution: error_to(&x),
        });
        x = projection.point;
        trace.push(x.clone());
    }

    let f_norm = problem.residual(&x).norm();
    let status = if f_norm < config.outer_tol {
        TerminationStatus::Converged
    } else {
        TerminationStatus::MaxIterations
    };
    finish(status, x, f_norm, trace, records)
}

/// Debug-build check that certified projections satisfy the ε-projection
/// inequality on every vertex the set exposes.
#[cfg(debug_assertions)]
fn verify_projection_certificate(
    set: &dyn crate::set::FeasibleSet,
    target: &DVector<f64>,
    projection: &crate::projection::ProjectionResult,
    epsilon: f64,
) {
    if !projection.certified() {
        return;
    }
    if let Some(vertices) = set.vertices() {
        let z = &projection.point;
        let residual_dir = target - z;
        let n = z.len() as f64;
        for y in &vertices {
            let offset = y - z;
            let value = residual_dir.dot(&offset);
            // Slack covers both the stated tolerance and the dot-product
            // rounding at the problem's coordinate scale.
            let slack = 1e-10 + 32.0 * n * f64::EPSILON * residual_dir.norm() * offset.norm();
            debug_assert!(
                value <= epsilon.max(crate::projection::GAP_FLOOR) + slack,
                "certified projection violates its certificate: {value} > {epsilon}"
            );
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OrderEstimateError {
    #[error("error trace does not decay enough to fit a convergence order")]
    InsufficientDecay,
}

const ORDER_FIT_UPPER: f64 = 1e-2;
const ORDER_DECAY_FACTOR: f64 = 0.6;

/// Fits the empirical convergence order from an iterate trace and the known
/// solution: the least-squares slope of `log e_{k+1}` against `log e_k` over
/// the final decaying stretch of errors `e_k = ‖x_k − x*‖`.
///
/// Only errors in `(max(20·floor, 10·eps), 10⁻²]` enter the fit, where
/// `floor` is the observed error floor when the tail has flattened; pairs
/// must decay by at least a factor [`ORDER_DECAY_FACTOR`]. Traces without at
/// least four positive errors spanning four orders of magnitude, or without
/// two qualifying pairs, are rejected.
pub fn estimate_convergence_order(
    trace: &[DVector<f64>],
    solution: &DVector<f64>,
) -> Result<f64, OrderEstimateError> {
    let errors: Vec<f64> = trace
        .iter()
        .map(|x| (x - solution).norm())
        .filter(|e| *e > 0.0)
        .collect();
    if errors.len() < 4 {
        return Err(OrderEstimateError::InsufficientDecay);
    }
    let max = errors.iter().cloned().fold(f64::MIN, f64::max);
    let floor = errors.iter().cloned().fold(f64::MAX, f64::min);
    if max / floor < 1e4 {
        return Err(OrderEstimateError::InsufficientDecay);
    }
    let tail_is_flat = errors.iter().filter(|&&e| e <= 2.0 * floor).count() >= 3;
    let lower = if tail_is_flat {
        (20.0 * floor).max(10.0 * f64::EPSILON)
    } else {
        10.0 * f64::EPSILON
    };

    let qualifies = |a: f64, b: f64| {
        a > lower && a <= ORDER_FIT_UPPER && b > lower && b <= ORDER_FIT_UPPER && b <= ORDER_DECAY_FACTOR * a
    };
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for k in 0..errors.len() - 1 {
        if qualifies(errors[k], errors[k + 1]) {
            match runs.last_mut() {
                Some(run) if *run.last().unwrap() + 1 == k => run.push(k),
                _ => runs.push(vec![k]),
            }
        }
    }
    let segment = match runs.last() {
        Some(s) if s.len() >= 2 => s,
        _ => return Err(OrderEstimateError::InsufficientDecay),
    };

    let xs: Vec<f64> = segment.iter().map(|&k| errors[k].ln()).collect();
    let ys: Vec<f64> = segment.iter().map(|&k| errors[k + 1].ln()).collect();
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return Err(OrderEstimateError::InsufficientDecay);
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cave::{generate_instance, CaveProblem};
    use crate::config::SolverConfig;
    use crate::report::TerminationStatus;
    use std::sync::Arc;

    #[test]
    fn mu_formula_and_floor() {
        assert_eq!(mu_from_gradient_norm(4.0, 1.0, 0.5, 1e-12), 2.0);
        assert_eq!(mu_from_gradient_norm(0.0, 2.0, 0.5, 1e-12), 1e-12);
        assert_eq!(mu_from_gradient_norm(1.0, 1.0, 0.9, 1e-12), 1.0);
    }

    #[test]
    fn zeta_schedule_values() {
        // mu = 2, ‖f‖ = 1: ζ = 2·min(1, 1)·1 = 2.
        assert_eq!(residual_tolerance_zeta(2.0, 1.0, 0.5, 1.0, 1.0), 2.0);
        // mu = 1, ‖f‖ = 1e-4, σ = 0.5: ζ = ‖f‖^{1.25} = 1e-5.
        let z = residual_tolerance_zeta(1.0, 1e-4, 0.5, 1.0, 1.0);
        assert!((z - 1e-5).abs() < 1e-18);
        // ‖f‖ = 0 clamps at the floor.
        assert_eq!(residual_tolerance_zeta(1.0, 0.0, 0.5, 1.0, 1.0), ZETA_MIN);
    }

    fn synthetic_trace(errors: &[f64]) -> (Vec<DVector<f64>>, DVector<f64>) {
        let solution = DVector::zeros(1);
        let trace = errors
            .iter()
            .map(|&e| DVector::from_element(1, e))
            .collect();
        (trace, solution)
    }

    #[test]
    fn order_fit_recovers_constructed_rate() {
        let errors: Vec<f64> = (0..8).map(|k| 10f64.powf(-(1.5f64.powi(k)))).collect();
        let (trace, solution) = synthetic_trace(&errors);
        let slope = estimate_convergence_order(&trace, &solution).unwrap();
        assert!((slope - 1.5).abs() < 0.01, "slope = {slope}");
    }

    #[test]
    fn order_fit_recovers_linear_rate() {
        let errors: Vec<f64> = (0..52).map(|k| 2f64.powi(-k)).collect();
        let (trace, solution) = synthetic_trace(&errors);
        let slope = estimate_convergence_order(&trace, &solution).unwrap();
        assert!((slope - 1.0).abs() < 0.01, "slope = {slope}");
    }

    #[test]
    fn order_fit_rejects_flat_traces() {
        let errors = vec![1.0, 0.9, 0.85, 0.8, 0.79];
        let (trace, solution) = synthetic_trace(&errors);
        assert_eq!(
            estimate_convergence_order(&trace, &solution),
            Err(OrderEstimateError::InsufficientDecay)
        );
    }

    #[test]
    fn order_fit_ignores_noise_floor() {
        let mut errors = vec![3e2, 12.0, 1e-3, 2e-6, 4e-11];
        errors.extend(std::iter::repeat(5e-14).take(10));
        errors[8] = 4.4e-14;
        let (trace, solution) = synthetic_trace(&errors);
        let slope = estimate_convergence_order(&trace, &solution).unwrap();
        // Mid-range pairs give orders around 1.7-1.9; floor jitter must not
        // drag the fit below them.
        assert!(slope > 1.4, "slope = {slope}");
    }

    fn cave_problem(n: usize, seed: u64) -> (CaveProblem, nalgebra::DVector<f64>) {
        let instance = generate_instance(n, 0.05, seed).unwrap();
        let x0 = instance.default_start();
        (CaveProblem::new(Arc::new(instance)).unwrap(), x0)
    }

    #[test]
    fn immediate_stop_when_start_is_a_root() {
        let (problem, _) = cave_problem(40, 3);
        let root = problem.known_solution().unwrap().clone();
        let report = solve(&problem, &root, &SolverConfig::default()).unwrap();
        assert_eq!(report.status, TerminationStatus::Converged);
        assert_eq!(report.outer_iterations(), 0);
        assert_eq!(report.trace.len(), 1);
        assert_eq!(report.trace[0], root);
    }

    #[test]
    fn inexact_and_exact_modes_both_converge() {
        let (problem, x0) = cave_problem(60, 11);
        let ip = solve(&problem, &x0, &SolverConfig::default()).unwrap();
        assert!(ip.converged(), "ip status {:?}", ip.status);
        assert!(ip.final_residual_norm < 1e-6);

        let ep_config = SolverConfig::default().with_projection_mode(ProjectionMode::Exact);
        let ep = solve(&problem, &x0, &ep_config).unwrap();
        assert!(ep.converged(), "ep status {:?}", ep.status);
        let diff = ip.outer_iterations() as i64 - ep.outer_iterations() as i64;
        assert!(diff.abs() <= 2, "ip {} vs ep {}", ip.outer_iterations(), ep.outer_iterations());
    }

    #[test]
    fn every_iterate_stays_feasible() {
        let (problem, x0) = cave_problem(50, 19);
        let report = solve(&problem, &x0, &SolverConfig::default()).unwrap();
        assert!(report.converged());
        assert_eq!(report.trace.len(), report.outer_iterations() + 1);
        for x in &report.trace {
            assert!(problem.feasible_set().contains(x, 1e-10));
        }
    }

    #[test]
    fn records_carry_certified_residuals() {
        let (problem, x0) = cave_problem(50, 23);
        let report = solve(&problem, &x0, &SolverConfig::default()).unwrap();
        for rec in &report.records {
            assert!(rec.inner_residual_norm <= rec.zeta * (1.0 + 1e-12));
            assert!(rec.mu > 0.0);
            assert!(rec.error_to_solution.is_some());
        }
        // residuals decrease monotonically over the last three iterations
        let tail: Vec<f64> = report
            .records
            .iter()
            .rev()
            .take(3)
            .map(|r| r.residual_norm)
            .collect();
        for w in tail.windows(2) {
            assert!(w[0] < w[1], "tail not monotone: {tail:?}");
        }
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let (problem, _) = cave_problem(30, 5);
        let bad = nalgebra::DVector::from_element(30, -1.0);
        assert!(matches!(
            solve(&problem, &bad, &SolverConfig::default()),
            Err(SolveError::InfeasibleStart)
        ));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (problem, x0) = cave_problem(30, 5);
        let bad = SolverConfig::default().with_sigma(2.0);
        assert!(matches!(
            solve(&problem, &x0, &bad),
            Err(SolveError::InvalidConfig(_))
        ));
    }

    #[test]
    fn cave_order_run_is_superlinear() {
        let (problem, x0) = cave_problem(100, 1);
        let config = SolverConfig::default().with_outer_tol(1e-12);
        let report = solve(&problem, &x0, &config).unwrap();
        let slope =
            estimate_convergence_order(&report.trace, problem.known_solution().unwrap()).unwrap();
        assert!(slope >= 1.1, "slope = {slope}");
    }
}
