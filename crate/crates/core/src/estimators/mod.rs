//! Parametric, nonparametric (RKHS) and combined estimators.

mod family;
mod parametric;
mod rkhs;

pub use family::{FamilyKind, ParametricFamily};
pub use parametric::{fit_parametric, ParametricLeastSquares};
pub use rkhs::{
    fit_combined, fit_combined_from, fit_nonparametric, fit_nonparametric_from, fit_smoothed_parametric,
    TikhonovObjective,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernels::RkhsCoefficients;
use crate::model::{Covariates, MechanisticModel};
use crate::optimize::SolverOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Parametric least squares fit.
    Par,
    /// Parametric fit followed by the direct RKHS problem on its values.
    ParDir,
    /// Iterated closed-form solves of linearized problems.
    AlyLin,
    /// Quasi-Newton on the full nonlinear objective.
    Nonlin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    /// Objective after the first accepted iterate of the stage.
    pub initial_objective: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub elapsed_s: f64,
}

/// Which refinement stages follow the initial parametric step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSelection {
    pub alylin: bool,
    pub nonlin: bool,
}

impl Default for StageSelection {
    fn default() -> Self {
        Self { alylin: true, nonlin: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lm: SolverOptions,
    pub nonlin: SolverOptions,
    /// Maximum number of linearize-and-solve iterations.
    pub niter: usize,
    /// Early stop when the relative objective change drops below this.
    pub alylin_tolerance: f64,
    /// Step halvings tried when a linearized solve increases the objective.
    pub max_halvings: usize,
    pub stages: StageSelection,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lm: SolverOptions::levenberg_marquardt(),
            nonlin: SolverOptions::quasi_newton(),
            niter: 10,
            alylin_tolerance: 1e-6,
            max_halvings: 20,
            stages: StageSelection::default(),
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        self.lm.validate()?;
        self.nonlin.validate()?;
        if !(self.alylin_tolerance >= 0.0) {
            return Err(Error::Input("alylin_tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: Option<ParametricFamily>,
    pub rkhs: Option<RkhsCoefficients>,
    pub lambda: Option<f64>,
    /// Value of the minimized objective (residual sum of squares for the
    /// parametric fit, penalized for the RKHS fits).
    pub objective: f64,
    /// Residual sum of squares `sum_i ||y_i - G(f(x_i), x_i)||^2`.
    pub rss: f64,
    pub n_obs: usize,
    pub stages: Vec<StageReport>,
    /// Set when a stage failed and earlier coefficients were returned.
    pub degraded: bool,
}

impl FitResult {
    /// Fitted parameter vector (model units) at `x`.
    pub fn theta_at(&self, x: &Covariates) -> DVector<f64> {
        let mut theta = match &self.rkhs {
            Some(h) => h.eval(x),
            None => DVector::zeros(4),
        };
        if let Some(f) = &self.family {
            theta += DVector::from_row_slice(&f.theta(x.age));
        }
        theta
    }

    pub fn mse(&self) -> f64 {
        self.rss / self.n_obs.max(1) as f64
    }

    /// Whether the result can be used downstream.
    pub fn is_usable(&self) -> bool {
        !self.degraded && self.objective.is_finite() && self.rss.is_finite()
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn predictions(&self, model: &dyn MechanisticModel, data: &Dataset) -> Result<Vec<DVector<f64>>> {
        data.records
            .iter()
            .map(|r| model.predict(self.theta_at(&r.covariates).as_slice(), &r.covariates))
            .collect()
    }

    /// Weight-normalized clearance `CL*(a)` in mL/day at the given ages, for
    /// a reference weight.
    pub fn cl_star_curve(&self, ages: &[f64]) -> Vec<f64> {
        ages.iter()
            .map(|&a| self.theta_at(&Covariates::new(a, crate::pkmodel::REFERENCE_WEIGHT_KG))[0] * 1000.0)
            .collect()
    }
}

fn check_inputs(model: &dyn MechanisticModel, data: &Dataset) -> Result<()> {
    data.validate()?;
    if data.q() != model.n_outputs() {
        return Err(Error::Input(format!(
            "dataset has {} observations per individual but the model produces {}",
            data.q(),
            model.n_outputs()
        )));
    }
    if model.n_params() != 4 {
        return Err(Error::Input("covariate families require a model with 4 parameters".into()));
    }
    Ok(())
}
