//! Local and global solvers used by the estimators and the benchmark.

mod anneal;
mod bfgs;
mod diff;
mod lm;

pub use anneal::simulated_annealing;
pub use bfgs::quasi_newton;
pub use diff::{finite_diff_gradient, finite_diff_jacobian};
pub use lm::levenberg_marquardt;

use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealingSchedule {
    pub initial_temperature: f64,
    /// Geometric cooling factor applied after each temperature level.
    pub decay: f64,
    pub moves_per_temperature: usize,
    /// Proposal standard deviation at the initial temperature; shrinks
    /// proportionally with the temperature.
    pub step_scale: f64,
}

impl Default for AnnealingSchedule {
    fn default() -> Self {
        Self { initial_temperature: 10.0, decay: 0.95, moves_per_temperature: 20, step_scale: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub annealing: AnnealingSchedule,
    pub seed: u64,
}

impl SolverOptions {
    pub fn levenberg_marquardt() -> Self {
        Self { max_iterations: 500, ..Self::base() }
    }

    pub fn quasi_newton() -> Self {
        Self { max_iterations: 2000, ..Self::base() }
    }

    pub fn annealing() -> Self {
        Self { max_iterations: 10_000, ..Self::base() }
    }

    fn base() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
            annealing: AnnealingSchedule::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.gradient_tolerance > 0.0) || !(self.step_tolerance > 0.0) {
            return Err(Error::Input("solver tolerances must be positive and max_iterations >= 1".into()));
        }
        Ok(())
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self::levenberg_marquardt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    #[serde(with = "duration_secs")]
    pub elapsed: Duration,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

/// Nonlinear least squares problem `min ||r(x)||^2`.
pub trait LeastSquares {
    /// `None` if `x` is outside the domain or the residuals are not finite.
    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>>;

    /// Residual Jacobian; central differences unless overridden.
    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        finite_diff_jacobian(|v| self.residuals(v), x, 1e-6).ok()
    }
}

/// Scalar objective with gradient for the quasi-Newton solver.
pub trait Objective {
    /// `+inf` outside the domain.
    fn value(&self, x: &DVector<f64>) -> f64;

    /// `None` outside the domain. Central differences unless overridden.
    fn value_and_gradient(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let f = self.value(x);
        if !f.is_finite() {
            return None;
        }
        let g = finite_diff_gradient(|v| self.value(v), x, 1e-6).ok()?;
        Some((f, g))
    }
}

/// Adapter turning a pair of closures into an [`Objective`].
pub struct FnObjective<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let f = (self.value)(x);
        f.is_finite().then(|| (f, (self.gradient)(x)))
    }
}

/// Adapter turning a residual closure into a [`LeastSquares`] problem with
/// finite-difference Jacobian.
pub struct FnResiduals<F>(pub F);

impl<F> LeastSquares for FnResiduals<F>
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        (self.0)(x).filter(|r| r.iter().all(|v| v.is_finite()))
    }
}
