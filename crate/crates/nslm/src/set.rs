//! Feasible sets: membership, linear minimization oracle, and (where cheap)
//! exact Euclidean projection.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SetError {
    #[error("input vector contains a non-finite entry")]
    NonFiniteInput,
    #[error("vector length {got} does not match set dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cap must be positive and finite, got {0}")]
    InvalidCap(f64),
    #[error("dimension must be at least 1")]
    InvalidDimension,
    #[error("this set has no exact projector")]
    ExactProjectionUnavailable,
}

/// A closed convex set accessed through oracles rather than an explicit
/// description. The linear-minimization oracle is the only operation the
/// conditional-gradient projection needs; an exact projector is optional.
pub trait FeasibleSet: Send + Sync {
    fn dim(&self) -> usize;

    /// True iff every defining inequality holds within `tol`.
    fn contains(&self, x: &DVector<f64>, tol: f64) -> bool;

    /// Returns some minimizer of `⟨c, y⟩` over the set.
    fn lmo(&self, c: &DVector<f64>) -> Result<DVector<f64>, SetError>;

    fn has_exact_projector(&self) -> bool {
        false
    }

    fn exact_project(&self, _x: &DVector<f64>) -> Result<DVector<f64>, SetError> {
        Err(SetError::ExactProjectionUnavailable)
    }

    /// Cheap feasible point near `u`, used to warm-start iterative
    /// projections. Not a projection; any feasible point is allowed.
    fn projection_warm_start(&self, _u: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    /// Vertex list for polytopes, used by certificate checks in tests.
    fn vertices(&self) -> Option<Vec<DVector<f64>>> {
        None
    }
}

/// The polytope `{x : Σ xᵢ ≤ d, xᵢ ≥ 0}`. Its vertices are the origin and
/// the scaled basis vectors `d·eᵢ`, which makes the LMO closed-form.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexCapSet {
    dim: usize,
    cap: f64,
}

impl SimplexCapSet {
    pub fn new(dim: usize, cap: f64) -> Result<Self, SetError> {
        if dim == 0 {
            return Err(SetError::InvalidDimension);
        }
        if !cap.is_finite() || cap <= 0.0 {
            return Err(SetError::InvalidCap(cap));
        }
        Ok(Self { dim, cap })
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<(), SetError> {
        if x.len() != self.dim {
            return Err(SetError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SetError::NonFiniteInput);
        }
        Ok(())
    }

    /// Euclidean projection via clipping, falling back to the sort-and-threshold
    /// simplex projection when the clipped point overshoots the cap.
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>, SetError> {
        self.check_input(x)?;
        let clipped = x.map(|v| v.max(0.0));
        if clipped.sum() <= self.cap {
            return Ok(clipped);
        }
        // Cap is active: project onto {p ≥ 0, Σ p = d}. The threshold λ solves
        // Σ max(xᵢ − λ, 0) = d and is found from the sorted prefix sums.
        let mut sorted: Vec<f64> = x.iter().copied().collect();
        sorted.sort_unstable_by(|a, b| b.partial_cmp(a).expect("inputs are finite"));
        let mut prefix = 0.0;
        let mut lambda = 0.0;
        for (j, &v) in sorted.iter().enumerate() {
            prefix += v;
            let candidate = (prefix - self.cap) / (j as f64 + 1.0);
            if v > candidate {
                lambda = candidate;
            }
        }
        Ok(x.map(|v| (v - lambda).max(0.0)))
    }
}

impl FeasibleSet for SimplexCapSet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        if x.len() != self.dim {
            return false;
        }
        x.iter().all(|&v| v >= -tol) && x.sum() <= self.cap + tol
    }

    /// Either the origin (all costs nonnegative) or `d·e_{i*}` at the most
    /// negative cost entry, lowest index on ties.
    fn lmo(&self, c: &DVector<f64>) -> Result<DVector<f64>, SetError> {
        self.check_input(c)?;
        let mut best = 0usize;
        for i in 1..self.dim {
            if c[i] < c[best] {
                best = i;
            }
        }
        let mut w = DVector::zeros(self.dim);
        if c[best] < 0.0 {
            w[best] = self.cap;
        }
        Ok(w)
    }

    fn has_exact_projector(&self) -> bool {
        true
    }

    fn exact_project(&self, x: &DVector<f64>) -> Result<DVector<f64>, SetError> {
        self.project(x)
    }

    /// Clip to the nonnegative orthant and rescale radially under the cap.
    fn projection_warm_start(&self, u: &DVector<f64>) -> Option<DVector<f64>> {
        if u.len() != self.dim || u.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut p = u.map(|v| v.max(0.0));
        let s = p.sum();
        if s > self.cap {
            p *= self.cap / s;
        }
        Some(p)
    }

    fn vertices(&self) -> Option<Vec<DVector<f64>>> {
        let mut vs = Vec::with_capacity(self.dim + 1);
        vs.push(DVector::zeros(self.dim));
        for i in 0..self.dim {
            let mut v = DVector::zeros(self.dim);
            v[i] = self.cap;
            vs.push(v);
        }
        Some(vs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn construction_rejects_degenerate_caps() {
        assert!(SimplexCapSet::new(2, 1.0).is_ok());
        assert_eq!(SimplexCapSet::new(2, 0.0), Err(SetError::InvalidCap(0.0)));
        assert_eq!(SimplexCapSet::new(2, -1.0), Err(SetError::InvalidCap(-1.0)));
        assert_eq!(SimplexCapSet::new(0, 1.0), Err(SetError::InvalidDimension));
    }

    #[test]
    fn lmo_picks_most_negative_vertex() {
        let set = SimplexCapSet::new(2, 1.0).unwrap();
        assert_eq!(set.lmo(&dvector![-1.0, 2.0]).unwrap(), dvector![1.0, 0.0]);

        let set3 = SimplexCapSet::new(3, 2.0).unwrap();
        assert_eq!(
            set3.lmo(&dvector![0.5, 0.1, 3.0]).unwrap(),
            dvector![0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn lmo_tie_breaks_on_lowest_index() {
        let set = SimplexCapSet::new(2, 1.0).unwrap();
        assert_eq!(set.lmo(&dvector![-1.0, -1.0]).unwrap(), dvector![1.0, 0.0]);
    }

    #[test]
    fn lmo_rejects_non_finite() {
        let set = SimplexCapSet::new(2, 1.0).unwrap();
        assert_eq!(
            set.lmo(&dvector![f64::NAN, 0.0]),
            Err(SetError::NonFiniteInput)
        );
    }

    #[test]
    fn projection_is_identity_on_feasible_points() {
        let set = SimplexCapSet::new(2, 1.0).unwrap();
        let x = dvector![0.2, 0.3];
        assert_eq!(set.exact_project(&x).unwrap(), x);
    }

    #[test]
    fn projection_hits_cap_face() {
        let set = SimplexCapSet::new(2, 1.0).unwrap();
        let p = set.exact_project(&dvector![2.0, 2.0]).unwrap();
        assert!((p - dvector![0.5, 0.5]).norm() < 1e-14);
    }

    #[test]
    fn projection_clips_negatives() {
        let set = SimplexCapSet::new(3, 1.0).unwrap();
        let p = set.exact_project(&dvector![-1.0, -2.0, -3.0]).unwrap();
        assert_eq!(p, dvector![0.0, 0.0, 0.0]);
    }

    #[test]
    fn membership_respects_tolerance() {
        let set = SimplexCapSet::new(2, 1.0).unwrap();
        assert!(set.contains(&dvector![0.5, 0.5], 0.0));
        assert!(!set.contains(&dvector![0.6, 0.6], 0.0));
        assert!(set.contains(&dvector![-1e-12, 0.0], 1e-10));
    }

    #[test]
    fn vertices_enumerate_origin_and_scaled_axes() {
        let set = SimplexCapSet::new(2, 3.0).unwrap();
        let vs = set.vertices().unwrap();
        assert_eq!(vs.len(), 3);
        assert_eq!(vs[0], dvector![0.0, 0.0]);
        assert_eq!(vs[1], dvector![3.0, 0.0]);
        assert_eq!(vs[2], dvector![0.0, 3.0]);
    }

    #[test]
    fn warm_start_is_feasible() {
        let set = SimplexCapSet::new(3, 1.0).unwrap();
        let z = set.projection_warm_start(&dvector![5.0, -2.0, 3.0]).unwrap();
        assert!(set.contains(&z, 1e-12));
    }
}
