//! Shared helpers for the integration tests: an independent numerical ODE
//! oracle for the two-compartment model and random small test problems.
#![allow(dead_code)]

use covgof::kernels::{FeatureMap, KernelSpec, Role, ScalarKernelSpec};
use covgof::model::Covariates;
use covgof::pkmodel::{PkParams, PkParamsStar};
use nalgebra::DMatrix;
use ode_solvers::{Dop853, OutputType, System, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Amounts (mg) in the central and peripheral compartments.
struct TwoCompartment {
    cl: f64,
    v1: f64,
    q: f64,
    v2: f64,
}

impl System<f64, Vector2<f64>> for TwoCompartment {
    fn system(&self, _t: f64, y: &Vector2<f64>, dy: &mut Vector2<f64>) {
        let c1 = y[0] / self.v1;
        let c2 = y[1] / self.v2;
        dy[0] = -self.cl * c1 - self.q * (c1 - c2);
        dy[1] = self.q * (c1 - c2);
    }
}

/// Central concentrations (mg/L) at `times` for bolus doses of `dose_mg`
/// at `dose_times`, integrated numerically between events. Parameters are
/// in mL and mL/day.
pub fn ode_concentrations(p: &PkParams, dose_mg: f64, dose_times: &[f64], times: &[f64]) -> Vec<f64> {
    let mut events: Vec<f64> = dose_times.iter().chain(times).copied().collect();
    events.sort_by(f64::total_cmp);
    events.dedup();
    let mut y = Vector2::new(0.0, 0.0);
    let mut t = 0.0;
    let mut out = vec![f64::NAN; times.len()];
    for &e in &events {
        if e > t {
            let sys = TwoCompartment { cl: p.cl, v1: p.v1, q: p.q, v2: p.v2 };
            // sparse output reports accepted steps, avoiding interpolation error
            let mut solver = Dop853::new(sys, t, e, e - t, y, 1e-13, 1e-18);
            solver.set_output(OutputType::Sparse);
            solver.integrate().expect("ODE integration");
            assert!((solver.x_out().last().unwrap() - e).abs() <= 1e-12 * e.max(1.0));
            y = *solver.y_out().last().unwrap();
            t = e;
        }
        // a sample at a dose time is taken after the bolus
        if dose_times.contains(&e) {
            y[0] += dose_mg;
        }
        for (k, &tk) in times.iter().enumerate() {
            if tk == e {
                out[k] = y[0] / p.v1 * 1000.0;
            }
        }
    }
    out
}

pub fn table1_adult() -> PkParamsStar {
    PkParamsStar { cl: 198.0, v1: 4090.0, q: 879.0, v2: 2230.0 }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_ages(n: usize, rng: &mut ChaCha8Rng) -> Vec<Covariates> {
    (0..n).map(|_| Covariates::new(rng.random::<f64>() * 20.0, 5.0 + rng.random::<f64>() * 60.0)).collect()
}

/// Random diagonal kernel with `p` components mixing Gaussian, constant and
/// polynomial-feature components in random roles.
pub fn random_kernel(p: usize, rng: &mut ChaCha8Rng) -> KernelSpec {
    let mut comps = Vec::with_capacity(p);
    let mut roles = Vec::with_capacity(p);
    for _ in 0..p {
        match rng.random_range(0..3) {
            0 => {
                comps.push(ScalarKernelSpec::gaussian(0.5 + 4.0 * rng.random::<f64>()));
                roles.push(Role::Dual);
            }
            1 => {
                comps.push(ScalarKernelSpec::Constant);
                roles.push(if rng.random() { Role::Primal } else { Role::Dual });
            }
            _ => {
                comps.push(ScalarKernelSpec::FiniteFeature { features: FeatureMap::Polynomial { degree: rng.random_range(1..3) } });
                roles.push(if rng.random() { Role::Primal } else { Role::Dual });
            }
        }
    }
    KernelSpec::with_roles(comps, roles).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}
