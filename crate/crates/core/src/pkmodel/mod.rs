//! Two-compartment i.v. bolus kinetics with allometric weight scaling.
//!
//! Weight-normalized parameters (reference weight 70 kg) are scaled to
//! the individual as `CL = CL* (w/70)^0.75`, `Q = Q* (w/70)^0.75`,
//! `V1 = V1* (w/70)`, `V2 = V2* (w/70)`. The central concentration after a
//! bolus dose `D` is the biexponential
//!
//! ```text
//! C1(t) = D/V1 / (z1 - z2) * [(z1 + Q/V2) e^{z1 t} - (z2 + Q/V2) e^{z2 t}]
//! ```
//!
//! where `z1 > z2` are the (negative) eigenvalues of the system matrix.
//! Repeated doses are superposed.
//!
//! Units: the mechanistic model works on parameter vectors in litres
//! (`[CL*, V1*, Q*, V2*]` in L/day, L, L/day, L). [`PkParamsStar`] and
//! [`PkParams`] carry the tabulated mL-based units; conversion happens in
//! [`PkParamsStar::theta`].

mod scenario;
mod weight;

pub use scenario::{simulate_dataset, ScenarioSpec};
pub use weight::{weight_for_age, WeightModel};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::ParametricFamily;
use crate::model::{Covariates, MechanisticModel};

pub const REFERENCE_WEIGHT_KG: f64 = 70.0;
const ML_PER_L: f64 = 1000.0;

/// Weight-normalized PK parameters in mL/day and mL.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PkParamsStar {
    pub cl: f64,
    pub v1: f64,
    pub q: f64,
    pub v2: f64,
}

impl PkParamsStar {
    /// Parameter vector in model units (litres).
    pub fn theta(&self) -> [f64; 4] {
        [self.cl / ML_PER_L, self.v1 / ML_PER_L, self.q / ML_PER_L, self.v2 / ML_PER_L]
    }

    pub fn from_theta(theta: &[f64]) -> Self {
        Self {
            cl: theta[0] * ML_PER_L,
            v1: theta[1] * ML_PER_L,
            q: theta[2] * ML_PER_L,
            v2: theta[3] * ML_PER_L,
        }
    }
}

/// Individual (weight-scaled) PK parameters in mL/day and mL.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PkParams {
    pub cl: f64,
    pub v1: f64,
    pub q: f64,
    pub v2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DosingSchedule {
    /// mg per kg body weight.
    pub dose_per_kg: f64,
    /// Days between doses.
    pub interval: f64,
    pub n_doses: usize,
}

impl Default for DosingSchedule {
    fn default() -> Self {
        Self { dose_per_kg: 15.0, interval: 30.0, n_doses: 1 }
    }
}

impl DosingSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.dose_per_kg > 0.0 && self.interval > 0.0 && self.n_doses >= 1) {
            return Err(Error::Input(format!("invalid dosing schedule {self:?}")));
        }
        Ok(())
    }

    pub fn dose_times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_doses).map(move |k| k as f64 * self.interval)
    }
}

pub fn allometric_scale(theta_star: &PkParamsStar, w: f64) -> PkParams {
    let r = w / REFERENCE_WEIGHT_KG;
    let r34 = r.powf(0.75);
    PkParams {
        cl: theta_star.cl * r34,
        v1: theta_star.v1 * r,
        q: theta_star.q * r34,
        v2: theta_star.v2 * r,
    }
}

/// Eigenvalues and sensitivities of the two-compartment system for fixed
/// absolute parameters (any consistent volume unit).
struct Disposition {
    cl: f64,
    v1: f64,
    q: f64,
    v2: f64,
    z1: f64,
    z2: f64,
    s: f64,
    k21: f64,
}

impl Disposition {
    fn new(cl: f64, v1: f64, q: f64, v2: f64) -> Result<Self> {
        if ![cl, v1, q, v2].iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Domain(format!(
                "PK parameters must be positive: CL={cl}, V1={v1}, Q={q}, V2={v2}"
            )));
        }
        let k21 = q / v2;
        let a = (cl + q) / v1 + k21;
        let b = cl * q / (v1 * v2);
        let disc = a * a - 4.0 * b;
        let s = disc.max(0.0).sqrt();
        let z2 = -0.5 * (a + s);
        // product form avoids cancellation in the slow eigenvalue
        let z1 = b / z2;
        if (z1 - z2).abs() <= 1e-12 * z2.abs() {
            return Err(Error::DegenerateEigenvalues(z1));
        }
        Ok(Self { cl, v1, q, v2, z1, z2, s: z1 - z2, k21 })
    }

    /// `F(t)` with `C1(t) = D / V1 * F(t)`.
    fn unit_response(&self, t: f64) -> f64 {
        let e1 = (self.z1 * t).exp();
        let e2 = (self.z2 * t).exp();
        ((self.z1 + self.k21) * e1 - (self.z2 + self.k21) * e2) / self.s
    }

    /// `F(t)` and its gradient with respect to (CL, V1, Q, V2).
    fn unit_response_grad(&self, t: f64) -> (f64, [f64; 4]) {
        let (cl, v1, q, v2) = (self.cl, self.v1, self.q, self.v2);
        let (z1, z2, s, k21) = (self.z1, self.z2, self.s, self.k21);
        let e1 = (z1 * t).exp();
        let e2 = (z2 * t).exp();
        let f = ((z1 + k21) * e1 - (z2 + k21) * e2) / s;
        let df_dz1 = (e1 * (1.0 + (z1 + k21) * t) - f) / s;
        let df_dz2 = (f - e2 * (1.0 + (z2 + k21) * t)) / s;
        let df_dk21 = (e1 - e2) / s;
        // a = (CL+Q)/V1 + Q/V2, b = CL Q / (V1 V2)
        let b = cl * q / (v1 * v2);
        let da = [1.0 / v1, -(cl + q) / (v1 * v1), 1.0 / v1 + 1.0 / v2, -q / (v2 * v2)];
        let db = [q / (v1 * v2), -b / v1, cl / (v1 * v2), -b / v2];
        let dk21 = [0.0, 0.0, 1.0 / v2, -q / (v2 * v2)];
        let mut g = [0.0; 4];
        for j in 0..4 {
            let dz1 = -z1 / s * da[j] - db[j] / s;
            let dz2 = z2 / s * da[j] + db[j] / s;
            g[j] = df_dz1 * dz1 + df_dz2 * dz2 + df_dk21 * dk21[j];
        }
        (f, g)
    }
}

/// Central concentration (mg/L) at time `t` (days) after a single bolus of
/// `dose_mg`, for individual parameters in mL units.
pub fn two_cmt_concentration(theta: &PkParams, dose_mg: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Input(format!("time must be nonnegative, got {t}")));
    }
    let disp = Disposition::new(theta.cl, theta.v1, theta.q, theta.v2)?;
    Ok(dose_mg * ML_PER_L / theta.v1 * disp.unit_response(t))
}

/// `G(theta, x)`: log central concentrations at the sampling times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PkModel {
    pub schedule: DosingSchedule,
    pub times: Vec<f64>,
}

impl PkModel {
    pub fn new(schedule: DosingSchedule, times: Vec<f64>) -> Result<Self> {
        schedule.validate()?;
        if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Input("sampling times must be finite and nonnegative".into()));
        }
        Ok(Self { schedule, times })
    }

    fn scaled(theta: &[f64], x: &Covariates) -> Result<(Disposition, [f64; 4])> {
        if theta.len() != 4 {
            return Err(Error::Input(format!("expected 4 PK parameters, got {}", theta.len())));
        }
        if !(x.weight > 0.0) {
            return Err(Error::Domain(format!("body weight must be positive, got {}", x.weight)));
        }
        let r = x.weight / REFERENCE_WEIGHT_KG;
        let r34 = r.powf(0.75);
        let factors = [r34, r, r34, r];
        let disp = Disposition::new(theta[0] * r34, theta[1] * r, theta[2] * r34, theta[3] * r)?;
        Ok((disp, factors))
    }

    fn evaluate(&self, theta: &[f64], x: &Covariates, want_jac: bool) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (disp, factors) = Self::scaled(theta, x)?;
        let c0 = self.schedule.dose_per_kg * x.weight / disp.v1;
        let q = self.times.len();
        let mut out = DVector::zeros(q);
        let mut jac = DMatrix::zeros(if want_jac { q } else { 0 }, 4);
        for (m, &t) in self.times.iter().enumerate() {
            let mut f = 0.0;
            let mut g = [0.0; 4];
            for td in self.schedule.dose_times() {
                if td > t {
                    break;
                }
                if want_jac {
                    let (fk, gk) = disp.unit_response_grad(t - td);
                    f += fk;
                    for j in 0..4 {
                        g[j] += gk[j];
                    }
                } else {
                    f += disp.unit_response(t - td);
                }
            }
            let c = c0 * f;
            if !(c > 0.0) {
                return Err(Error::Domain(format!("non-positive concentration {c} at t={t}")));
            }
            out[m] = c.ln();
            if want_jac {
                // d ln C = d ln c0 + d ln F; c0 depends on V1 only
                for j in 0..4 {
                    let mut d = g[j] / f;
                    if j == 1 {
                        d -= 1.0 / disp.v1;
                    }
                    jac[(m, j)] = d * factors[j];
                }
            }
        }
        Ok((out, jac))
    }
}

impl MechanisticModel for PkModel {
    fn n_params(&self) -> usize {
        4
    }

    fn n_outputs(&self) -> usize {
        self.times.len()
    }

    fn predict(&self, theta: &[f64], x: &Covariates) -> Result<DVector<f64>> {
        Ok(self.evaluate(theta, x, false)?.0)
    }

    fn predict_with_jacobian(&self, theta: &[f64], x: &Covariates) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.evaluate(theta, x, true)
    }
}

/// `G(theta*, x)` for weight-normalized parameters in mL units.
pub fn mechanistic_g(
    theta_star: &PkParamsStar,
    x: &Covariates,
    schedule: &DosingSchedule,
    times: &[f64],
) -> Result<DVector<f64>> {
    PkModel::new(*schedule, times.to_vec())?.predict(&theta_star.theta(), x)
}

pub fn covariate_family_eval(family: &ParametricFamily, age: f64) -> Result<PkParamsStar> {
    if !(age >= 0.0) {
        return Err(Error::Input(format!("age must be nonnegative, got {age}")));
    }
    Ok(family.eval(age))
}
