//! Parametric covariate families for weight-normalized clearance.
//!
//! Only `CL*` depends on age; `V1*`, `Q*`, `V2*` are age-independent
//! entries of `tau`. All entries of `tau` use the tabulated mL units.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pkmodel::PkParamsStar;

const ML_PER_L: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// `CL*(a) = (1 - alpha e^{-beta a}) CL*max`
    SaturableExponential,
    /// `CL*(a) = alpha + beta a`
    AffineLinear,
    /// `CL*(a) = CL*max a / (K_M + a)`
    MichaelisMenten,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 3] =
        [FamilyKind::SaturableExponential, FamilyKind::AffineLinear, FamilyKind::MichaelisMenten];

    pub fn n_tau(self) -> usize {
        match self {
            FamilyKind::SaturableExponential => 6,
            _ => 5,
        }
    }

    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            FamilyKind::SaturableExponential => &["alpha", "beta", "cl_max", "v1", "q", "v2"],
            FamilyKind::AffineLinear => &["alpha", "beta", "v1", "q", "v2"],
            FamilyKind::MichaelisMenten => &["cl_max", "k_m", "v1", "q", "v2"],
        }
    }

    /// Order-of-magnitude starting values.
    pub fn default_start(self) -> Vec<f64> {
        match self {
            FamilyKind::SaturableExponential => vec![0.5, 0.1, 200.0, 4000.0, 900.0, 2000.0],
            FamilyKind::AffineLinear => vec![100.0, 5.0, 4000.0, 900.0, 2000.0],
            FamilyKind::MichaelisMenten => vec![200.0, 2.0, 4000.0, 900.0, 2000.0],
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            FamilyKind::SaturableExponential => "satexp",
            FamilyKind::AffineLinear => "affine",
            FamilyKind::MichaelisMenten => "mm",
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "satexp" | "saturable" | "saturable_exponential" => Ok(FamilyKind::SaturableExponential),
            "affine" | "linear" | "affine_linear" => Ok(FamilyKind::AffineLinear),
            "mm" | "michaelis_menten" => Ok(FamilyKind::MichaelisMenten),
            _ => Err(Error::Input(format!("unknown family '{s}' (expected satexp, affine or mm)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricFamily {
    pub kind: FamilyKind,
    pub tau: Vec<f64>,
}

impl ParametricFamily {
    pub fn new(kind: FamilyKind, tau: Vec<f64>) -> Result<Self> {
        let fam = Self { kind, tau };
        fam.validate()?;
        Ok(fam)
    }

    /// Saturable exponential with the reference simulation values
    /// (alpha corrected to 0.589).
    pub fn table1() -> Self {
        Self { kind: FamilyKind::SaturableExponential, tau: vec![0.589, 0.133, 198.0, 4090.0, 879.0, 2230.0] }
    }

    pub fn default_start(kind: FamilyKind) -> Self {
        Self { kind, tau: kind.default_start() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau.len() != self.kind.n_tau() {
            return Err(Error::Input(format!(
                "{} family expects {} parameters, got {}",
                self.kind,
                self.kind.n_tau(),
                self.tau.len()
            )));
        }
        if self.tau.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite family parameter".into()));
        }
        let t = &self.tau;
        let ok = match self.kind {
            FamilyKind::SaturableExponential => (0.0..=1.0).contains(&t[0]) && t[1] > 0.0 && t[2] > 0.0,
            FamilyKind::AffineLinear => true,
            FamilyKind::MichaelisMenten => t[0] > 0.0 && t[1] > 0.0,
        };
        let k = t.len();
        if !ok || !t[k - 3..].iter().all(|v| *v > 0.0) {
            return Err(Error::Domain(format!("{} parameters outside the admissible domain: {t:?}", self.kind)));
        }
        Ok(())
    }

    /// `CL*(a)` in mL/day.
    pub fn cl_star(&self, age: f64) -> f64 {
        let t = &self.tau;
        match self.kind {
            FamilyKind::SaturableExponential => (1.0 - t[0] * (-t[1] * age).exp()) * t[2],
            FamilyKind::AffineLinear => t[0] + t[1] * age,
            FamilyKind::MichaelisMenten => t[0] * age / (t[1] + age),
        }
    }

    pub fn eval(&self, age: f64) -> PkParamsStar {
        let k = self.tau.len();
        PkParamsStar { cl: self.cl_star(age), v1: self.tau[k - 3], q: self.tau[k - 2], v2: self.tau[k - 1] }
    }

    /// Parameter vector in model units (litres).
    pub fn theta(&self, age: f64) -> [f64; 4] {
        self.eval(age).theta()
    }

    /// Stacked parameter values `theta_l(x_i)` at index `l * n + i`.
    pub fn stacked_theta(&self, ages: &[f64]) -> DVector<f64> {
        let n = ages.len();
        let mut out = DVector::zeros(4 * n);
        for (i, &a) in ages.iter().enumerate() {
            for (l, v) in self.theta(a).into_iter().enumerate() {
                out[l * n + i] = v;
            }
        }
        out
    }

    /// 4×k Jacobian of `theta(age)` (litres) with respect to `tau`.
    pub fn dtheta_dtau(&self, age: f64) -> DMatrix<f64> {
        let t = &self.tau;
        let k = t.len();
        let mut jac = DMatrix::zeros(4, k);
        match self.kind {
            FamilyKind::SaturableExponential => {
                let e = (-t[1] * age).exp();
                jac[(0, 0)] = -e * t[2];
                jac[(0, 1)] = t[0] * age * e * t[2];
                jac[(0, 2)] = 1.0 - t[0] * e;
            }
            FamilyKind::AffineLinear => {
                jac[(0, 0)] = 1.0;
                jac[(0, 1)] = age;
            }
            FamilyKind::MichaelisMenten => {
                let s = t[1] + age;
                jac[(0, 0)] = age / s;
                jac[(0, 1)] = -t[0] * age / (s * s);
            }
        }
        for j in 0..3 {
            jac[(1 + j, k - 3 + j)] = 1.0;
        }
        jac / ML_PER_L
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturable_limits() {
        let f = ParametricFamily::table1();
        assert!((f.cl_star(0.0) - 81.378).abs() < 1e-9);
        assert!((f.cl_star(1e4) - 198.0).abs() < 1e-9);
    }

    #[test]
    fn michaelis_menten_half_saturation() {
        let f = ParametricFamily::new(FamilyKind::MichaelisMenten, vec![200.0, 3.0, 4000.0, 900.0, 2000.0]).unwrap();
        assert!((f.cl_star(3.0) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn domain_checks() {
        assert!(ParametricFamily::new(FamilyKind::SaturableExponential, vec![1.5, 0.1, 1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(ParametricFamily::new(FamilyKind::MichaelisMenten, vec![1.0, -1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(ParametricFamily::new(FamilyKind::AffineLinear, vec![1.0, 1.0, 1.0]).is_err());
        assert!(ParametricFamily::new(FamilyKind::AffineLinear, vec![-1.0, 1.0, 1.0, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for fam in [
            ParametricFamily::table1(),
            ParametricFamily::default_start(FamilyKind::AffineLinear),
            ParametricFamily::default_start(FamilyKind::MichaelisMenten),
        ] {
            for age in [0.3, 4.0, 17.0] {
                let jac = fam.dtheta_dtau(age);
                for j in 0..fam.tau.len() {
                    let h = 1e-6 * fam.tau[j].abs().max(1.0);
                    let mut up = fam.clone();
                    up.tau[j] += h;
                    let mut down = fam.clone();
                    down.tau[j] -= h;
                    for l in 0..4 {
                        let fd = (up.theta(age)[l] - down.theta(age)[l]) / (2.0 * h);
                        assert!((fd - jac[(l, j)]).abs() <= 1e-7 * (1.0 + jac[(l, j)].abs()), "{:?} {j} {l}", fam.kind);
                    }
                }
            }
        }
    }

    #[test]
    fn parse_names() {
        for k in FamilyKind::ALL {
            assert_eq!(k.short_name().parse::<FamilyKind>().unwrap(), k);
        }
        assert!("cubic".parse::<FamilyKind>().is_err());
    }
}
