//! Contracts for constrained nonsmooth equations: find `x ∈ C` with `f(x) = 0`.

use crate::set::FeasibleSet;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// A generalized-derivative element at some point, exposed as a matrix-free
/// linear operator. Implementations never materialize the matrix; the inner
/// solver only needs `Vv` and `Vᵀw`.
pub trait JacobianOperator: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
    fn apply_transpose(&self, w: &DVector<f64>) -> DVector<f64>;
}

/// A constrained nonsmooth equation. The residual and the derivative-element
/// selector must be deterministic: repeated calls at the same point return
/// identical values, and the selector always picks the same element when the
/// generalized derivative is set-valued.
pub trait Problem: Send + Sync {
    /// Number of unknowns n.
    fn dim(&self) -> usize;

    /// Residual dimension m; square by default.
    fn residual_dim(&self) -> usize {
        self.dim()
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64>;

    /// One element of the generalized derivative at `x`.
    fn jacobian_element(&self, x: &DVector<f64>) -> Box<dyn JacobianOperator>;

    fn feasible_set(&self) -> &dyn FeasibleSet;

    /// Known root, for convergence diagnostics only; the solver's iteration
    /// never branches on it.
    fn known_solution(&self) -> Option<&DVector<f64>> {
        None
    }
}

/// One failed validation check, with the magnitude that tripped it.
#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub check: &'static str,
    pub magnitude: f64,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {} (magnitude {:.3e})", self.check, self.message, self.magnitude)
    }
}

const ADJOINT_PROBES: usize = 10;
const ADJOINT_REL_TOL: f64 = 1e-10;
const SOLUTION_RESIDUAL_TOL: f64 = 1e-12;
const MEMBERSHIP_TOL: f64 = 1e-10;

fn random_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0))
}

/// Checks a problem against its contract: consistent dimensions, the adjoint
/// identity `⟨Vv, w⟩ = ⟨v, Vᵀw⟩` on random probes, determinism of the residual
/// and the element selector, and the known-solution invariant when present.
/// Returns an empty list when everything holds.
pub fn validate(problem: &dyn Problem) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = problem.dim();
    let m = problem.residual_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e73_6c6d);

    if problem.feasible_set().dim() != n {
        out.push(Diagnostic {
            check: "dimensions",
            magnitude: problem.feasible_set().dim() as f64,
            message: format!(
                "feasible set dimension {} != problem dimension {}",
                problem.feasible_set().dim(),
                n
            ),
        });
        return out;
    }

    // Probe at a feasible-ish point blended from two oracle calls, plus the
    // origin-shifted random points the adjoint test uses for v and w.
    let set = problem.feasible_set();
    let probe_point = {
        let c1 = random_vector(&mut rng, n);
        let c2 = random_vector(&mut rng, n);
        match (set.lmo(&c1), set.lmo(&c2)) {
            (Ok(a), Ok(b)) => (a + b) * 0.5,
            _ => DVector::zeros(n),
        }
    };

    let f_probe = problem.residual(&probe_point);
    if f_probe.len() != m {
        out.push(Diagnostic {
            check: "dimensions",
            magnitude: f_probe.len() as f64,
            message: format!("residual length {} != declared m = {}", f_probe.len(), m),
        });
        return out;
    }
    let f_again = problem.residual(&probe_point);
    if f_probe != f_again {
        out.push(Diagnostic {
            check: "determinism",
            magnitude: (f_probe - &f_again).norm(),
            message: "residual evaluator returned different values at the same point".into(),
        });
    }

    let v_op = problem.jacobian_element(&probe_point);
    if v_op.nrows() != m || v_op.ncols() != n {
        out.push(Diagnostic {
            check: "dimensions",
            magnitude: v_op.nrows() as f64,
            message: format!(
                "jacobian element is {}x{}, expected {}x{}",
                v_op.nrows(),
                v_op.ncols(),
                m,
                n
            ),
        });
        return out;
    }

    let v_op2 = problem.jacobian_element(&probe_point);
    let det_probe = random_vector(&mut rng, n);
    let first = v_op.apply(&det_probe);
    let second = v_op2.apply(&det_probe);
    if first != second {
        out.push(Diagnostic {
            check: "determinism",
            magnitude: (first - &second).norm(),
            message: "jacobian-element selector is not deterministic at a fixed point".into(),
        });
    }

    for _ in 0..ADJOINT_PROBES {
        let v = random_vector(&mut rng, n);
        let w = random_vector(&mut rng, m);
        let lhs = v_op.apply(&v).dot(&w);
        let rhs = v.dot(&v_op.apply_transpose(&w));
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        let rel = (lhs - rhs).abs() / scale;
        if rel > ADJOINT_REL_TOL {
            out.push(Diagnostic {
                check: "adjoint-identity",
                magnitude: rel,
                message: format!("⟨Vv, w⟩ = {lhs:.6e} but ⟨v, Vᵀw⟩ = {rhs:.6e}"),
            });
            break;
        }
    }

    if let Some(solution) = problem.known_solution() {
        let res_norm = problem.residual(solution).norm();
        if res_norm > SOLUTION_RESIDUAL_TOL {
            out.push(Diagnostic {
                check: "known-solution-residual",
                magnitude: res_norm,
                message: format!("‖f(x*)‖ = {res_norm:.3e} exceeds {SOLUTION_RESIDUAL_TOL:e}"),
            });
        }
        if !set.contains(solution, MEMBERSHIP_TOL) {
            out.push(Diagnostic {
                check: "known-solution-feasibility",
                magnitude: f64::NAN,
                message: "known solution fails the membership test".into(),
            });
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::set::SimplexCapSet;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    struct DenseOp {
        m: DMatrix<f64>,
        lie_about_transpose: bool,
    }

    impl JacobianOperator for DenseOp {
        fn nrows(&self) -> usize {
            self.m.nrows()
        }
        fn ncols(&self) -> usize {
            self.m.ncols()
        }
        fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
            &self.m * v
        }
        fn apply_transpose(&self, w: &DVector<f64>) -> DVector<f64> {
            if self.lie_about_transpose {
                &self.m * w
            } else {
                self.m.transpose() * w
            }
        }
    }

    struct LinearProblem {
        a: Arc<DMatrix<f64>>,
        set: SimplexCapSet,
        broken_transpose: bool,
    }

    impl Problem for LinearProblem {
        fn dim(&self) -> usize {
            self.a.ncols()
        }
        fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
            self.a.as_ref() * x
        }
        fn jacobian_element(&self, _x: &DVector<f64>) -> Box<dyn JacobianOperator> {
            Box::new(DenseOp {
                m: self.a.as_ref().clone(),
                lie_about_transpose: self.broken_transpose,
            })
        }
        fn feasible_set(&self) -> &dyn FeasibleSet {
            &self.set
        }
    }

    fn non_symmetric(broken: bool) -> LinearProblem {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        LinearProblem {
            a: Arc::new(a),
            set: SimplexCapSet::new(2, 1.0).unwrap(),
            broken_transpose: broken,
        }
    }

    #[test]
    fn well_formed_problem_passes() {
        assert!(validate(&non_symmetric(false)).is_empty());
    }

    #[test]
    fn broken_transpose_is_flagged() {
        let diags = validate(&non_symmetric(true));
        assert!(diags.iter().any(|d| d.check == "adjoint-identity"));
    }
}
