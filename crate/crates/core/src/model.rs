//! The mechanistic model interface `G(theta, x)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Covariates of one individual: age in years and body weight in kg.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub age: f64,
    pub weight: f64,
}

impl Covariates {
    pub fn new(age: f64, weight: f64) -> Self {
        Self { age, weight }
    }
}

/// Known nonlinear map from a parameter vector and covariates to a
/// q-vector of observations.
pub trait MechanisticModel: Sync {
    /// Dimension p of the parameter vector.
    fn n_params(&self) -> usize;

    /// Dimension q of the observation vector.
    fn n_outputs(&self) -> usize;

    fn predict(&self, theta: &[f64], x: &Covariates) -> Result<DVector<f64>>;

    /// Prediction together with the q×p Jacobian with respect to theta.
    ///
    /// The default uses central differences with relative step 1e-6.
    fn predict_with_jacobian(
        &self,
        theta: &[f64],
        x: &Covariates,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let g0 = self.predict(theta, x)?;
        let p = theta.len();
        let mut jac = DMatrix::zeros(g0.len(), p);
        let mut work = theta.to_vec();
        for l in 0..p {
            let h = 1e-6 * theta[l].abs().max(1.0);
            work[l] = theta[l] + h;
            let up = self.predict(&work, x)?;
            work[l] = theta[l] - h;
            let down = self.predict(&work, x)?;
            work[l] = theta[l];
            jac.set_column(l, &((up - down) / (2.0 * h)));
        }
        Ok((g0, jac))
    }
}

/// `G(theta, x) = A theta` with a fixed q×p matrix; used for direct and
/// linear test problems.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub matrix: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn identity(p: usize) -> Self {
        Self::new(DMatrix::identity(p, p))
    }
}

impl MechanisticModel for LinearModel {
    fn n_params(&self) -> usize {
        self.matrix.ncols()
    }

    fn n_outputs(&self) -> usize {
        self.matrix.nrows()
    }

    fn predict(&self, theta: &[f64], _x: &Covariates) -> Result<DVector<f64>> {
        Ok(&self.matrix * DVector::from_column_slice(theta))
    }

    fn predict_with_jacobian(
        &self,
        theta: &[f64],
        x: &Covariates,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.predict(theta, x)?, self.matrix.clone()))
    }
}
