//! Test support: dense operators, application counters, and brute-force
//! oracles kept independent of the production code paths they check.

use crate::problem::JacobianOperator;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Jacobian element backed by an explicit dense matrix. Only suitable for
/// small tests; production operators stay matrix-free.
pub struct DenseJacobian {
    matrix: DMatrix<f64>,
}

impl DenseJacobian {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl JacobianOperator for DenseJacobian {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    fn apply_transpose(&self, w: &DVector<f64>) -> DVector<f64> {
        self.matrix.transpose() * w
    }
}

/// Wrapper counting forward and transpose applications of an operator.
pub struct CountingJacobian<J> {
    inner: J,
    forward: AtomicUsize,
    transpose: AtomicUsize,
}

impl<J: JacobianOperator> CountingJacobian<J> {
    pub fn new(inner: J) -> Self {
        Self {
            inner,
            forward: AtomicUsize::new(0),
            transpose: AtomicUsize::new(0),
        }
    }

    pub fn forward_count(&self) -> usize {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn transpose_count(&self) -> usize {
        self.transpose.load(Ordering::Relaxed)
    }
}

impl<J: JacobianOperator> JacobianOperator for CountingJacobian<J> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.forward.fetch_add(1, Ordering::Relaxed);
        self.inner.apply(v)
    }

    fn apply_transpose(&self, w: &DVector<f64>) -> DVector<f64> {
        self.transpose.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_transpose(w)
    }
}

/// Dense matrix with entries uniform in (-1, 1).
pub fn random_dense<R: Rng>(nrows: usize, ncols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(nrows, ncols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Uniform vector in a centered box of the given half-width.
pub fn random_vector<R: Rng>(len: usize, half_width: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(-half_width..half_width))
}

/// Brute-force Euclidean projection onto `{p ≥ 0, Σp ≤ d}` by enumerating
/// every active set: each zero pattern, with and without the cap tight.
/// Exponential in the dimension; intended for n ≤ ~12.
pub fn brute_force_simplex_cap_projection(x: &DVector<f64>, cap: f64) -> DVector<f64> {
    let n = x.len();
    assert!(n <= 20, "active-set enumeration is exponential in n");
    let mut best: Option<(f64, DVector<f64>)> = None;
    let feas_tol = 1e-9;
    let mut consider = |p: DVector<f64>| {
        if p.iter().any(|&v| v < -feas_tol) || p.sum() > cap + feas_tol {
            return;
        }
        let p = p.map(|v| v.max(0.0));
        let dist = (&p - x).norm_squared();
        if best.as_ref().map_or(true, |(b, _)| dist < *b) {
            best = Some((dist, p));
        }
    };
    for mask in 0..(1u32 << n) {
        let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        // Cap inactive: free coordinates keep their values.
        let mut p = DVector::zeros(n);
        for &i in &free {
            p[i] = x[i];
        }
        consider(p);
        // Cap active: shift free coordinates by a common multiplier.
        if !free.is_empty() {
            let s: f64 = free.iter().map(|&i| x[i]).sum();
            let lambda = (s - cap) / free.len() as f64;
            let mut p = DVector::zeros(n);
            for &i in &free {
                p[i] = x[i] - lambda;
            }
            consider(p);
        }
    }
    best.expect("origin is always feasible").1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::set::{FeasibleSet, SimplexCapSet};
    use nalgebra::dvector;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn brute_force_matches_hand_case() {
        let p = brute_force_simplex_cap_projection(&dvector![2.0, 2.0], 1.0);
        assert!((p - dvector![0.5, 0.5]).norm() < 1e-12);
    }

    #[test]
    fn brute_force_agrees_with_sort_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.gen_range(1..=6);
            let cap = rng.gen_range(0.2..3.0);
            let set = SimplexCapSet::new(n, cap).unwrap();
            let x = random_vector(n, 4.0, &mut rng);
            let fast = set.exact_project(&x).unwrap();
            let slow = brute_force_simplex_cap_projection(&x, cap);
            assert!(
                (&fast - &slow).norm() <= 1e-8,
                "mismatch at n={n} cap={cap}: {fast:?} vs {slow:?}"
            );
        }
    }
}
