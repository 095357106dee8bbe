//! Solver configuration and its validity rules.

use crate::projection::ProjectionMode;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("eta must satisfy eta >= 1, got {0}")]
    Eta(f64),
    #[error("sigma must lie strictly in (0, 1), got {0}")]
    Sigma(f64),
    #[error("theta must be positive and finite, got {0}")]
    Theta(f64),
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{0} must be at least 1")]
    ZeroIterationCap(&'static str),
}

/// Rule for the per-iteration projection tolerance factor `θ_k ∈ [0, θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ThetaSchedule {
    /// `θ_k = θ/2` for every iteration.
    ConstantHalf,
    /// `θ_k = θ/2^{k+1}`, shrinking the projection tolerance geometrically.
    Halving,
}

impl ThetaSchedule {
    pub fn theta_k(&self, theta: f64, k: usize) -> f64 {
        match self {
            ThetaSchedule::ConstantHalf => theta / 2.0,
            ThetaSchedule::Halving => theta / 2f64.powi(k.min(1000) as i32 + 1),
        }
    }
}

/// Tunables for the outer solver loop. `Default` reproduces the benchmark
/// protocol: `η = 1`, `σ = 1/2`, `θ = 10⁻²`, stop at `‖f(x_k)‖ < 10⁻⁶`,
/// at most 100 outer and 100 projection iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Regularization gain `η ≥ 1` in `μ_k = η‖Vᵀf(x_k)‖^σ`.
    pub eta: f64,
    /// Regularization exponent `σ ∈ (0, 1)`.
    pub sigma: f64,
    /// Projection tolerance scale `θ > 0`; `ε_k = θ_k²‖d_k‖²` with `θ_k < θ`.
    pub theta: f64,
    pub theta_schedule: ThetaSchedule,
    /// Outer stop: `‖f(x_k)‖ < outer_tol`.
    pub outer_tol: f64,
    pub max_outer_iters: usize,
    /// Krylov iteration cap per inner solve.
    pub max_inner_iters: usize,
    /// Conditional-gradient iteration cap per projection.
    pub max_projection_iters: usize,
    pub projection_mode: ProjectionMode,
    /// Gain `c` in the inner-residual schedule `ζ_k = c·μ_k·‖f‖^{1+σ/2}`.
    pub residual_gain: f64,
    /// Upper bound `ν̄` on the schedule's inexactness factor.
    pub nu_cap: f64,
    /// Safeguard: the inner tolerance never exceeds this fraction of
    /// `‖Vᵀf(x_k)‖`, so an inner solve cannot accept `d = 0` far from a root.
    pub residual_rel_cap: f64,
    /// Lower bound on `μ_k`, keeping the inner operator positive definite at
    /// a root where `‖Vᵀf‖ = 0`.
    pub mu_floor: f64,
    /// When true, a projection that exhausts its iteration budget without a
    /// gap certificate aborts the solve instead of being accepted as a
    /// feasible best-effort point.
    pub strict_projection: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            sigma: 0.5,
            theta: 1e-2,
            theta_schedule: ThetaSchedule::ConstantHalf,
            outer_tol: 1e-6,
            max_outer_iters: 100,
            max_inner_iters: 5000,
            max_projection_iters: 100,
            projection_mode: ProjectionMode::Inexact,
            residual_gain: 1.0,
            nu_cap: 1.0,
            residual_rel_cap: 1e-2,
            mu_floor: 1e-12,
            strict_projection: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.eta.is_finite() || self.eta < 1.0 {
            return Err(ConfigError::Eta(self.eta));
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 || self.sigma >= 1.0 {
            return Err(ConfigError::Sigma(self.sigma));
        }
        if !self.theta.is_finite() || self.theta <= 0.0 {
            return Err(ConfigError::Theta(self.theta));
        }
        for (name, value) in [
            ("outer_tol", self.outer_tol),
            ("residual_gain", self.residual_gain),
            ("nu_cap", self.nu_cap),
            ("residual_rel_cap", self.residual_rel_cap),
            ("mu_floor", self.mu_floor),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        if self.max_outer_iters == 0 {
            return Err(ConfigError::ZeroIterationCap("max_outer_iters"));
        }
        if self.max_inner_iters == 0 {
            return Err(ConfigError::ZeroIterationCap("max_inner_iters"));
        }
        if self.max_projection_iters == 0 {
            return Err(ConfigError::ZeroIterationCap("max_projection_iters"));
        }
        Ok(())
    }

    pub fn with_projection_mode(mut self, mode: ProjectionMode) -> Self {
        self.projection_mode = mode;
        self
    }

    pub fn with_outer_tol(mut self, tol: f64) -> Self {
        self.outer_tol = tol;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }
}
