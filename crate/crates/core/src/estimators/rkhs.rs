//! Tikhonov-regularized RKHS estimators.
//!
//! Both the purely nonparametric problem and the combined problem minimize
//!
//! ```text
//! Q(gamma) = sum_i ||y_i - G(g(x_i) + h_gamma(x_i), x_i)||^2 + n lambda gamma^T D gamma
//! ```
//!
//! where `g` is zero for the nonparametric problem and the fixed
//! parametric fit for the combined one.

use std::time::Instant;

use nalgebra::DVector;

use super::{check_inputs, fit_parametric, FamilyKind, FitOptions, FitResult, ParametricFamily, Stage, StageReport};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::invlinear::{linearize, solve_gamma, LinearizedProblem};
use crate::kernels::{assemble_mixed_operators, KernelSpec, MixedOperators};
use crate::model::MechanisticModel;
use crate::optimize::{quasi_newton, Objective};

/// The nonlinear Tikhonov objective over the mixed coefficients `gamma`.
pub struct TikhonovObjective<'a> {
    pub model: &'a dyn MechanisticModel,
    pub data: &'a Dataset,
    pub ops: &'a MixedOperators,
    /// Stacked values of the fixed parametric part, index `l * n + i`.
    pub base: DVector<f64>,
    pub lambda: f64,
}

impl<'a> TikhonovObjective<'a> {
    pub fn new(
        model: &'a dyn MechanisticModel,
        data: &'a Dataset,
        ops: &'a MixedOperators,
        base: DVector<f64>,
        lambda: f64,
    ) -> Self {
        Self { model, data, ops, base, lambda }
    }

    fn penalty(&self, gamma: &DVector<f64>) -> f64 {
        self.data.n() as f64 * self.lambda * self.ops.norm_sq(gamma)
    }

    /// Residual sum of squares, `None` if `G` is undefined somewhere.
    pub fn rss(&self, gamma: &DVector<f64>) -> Option<f64> {
        Some(self.evaluate(gamma, false)?.0)
    }

    fn evaluate(&self, gamma: &DVector<f64>, want_grad: bool) -> Option<(f64, Option<DVector<f64>>)> {
        let n = self.ops.n;
        let p = self.ops.p();
        let theta = &self.base + self.ops.apply_m(gamma);
        let mut rss = 0.0;
        let mut g_theta = DVector::zeros(if want_grad { n * p } else { 0 });
        let mut th = vec![0.0; p];
        for (i, rec) in self.data.records.iter().enumerate() {
            for (l, t) in th.iter_mut().enumerate() {
                *t = theta[l * n + i];
            }
            if want_grad {
                let (g, jac) = self.model.predict_with_jacobian(&th, &rec.covariates).ok()?;
                let r = &rec.y - g;
                rss += r.norm_squared();
                let v = jac.tr_mul(&r);
                for l in 0..p {
                    g_theta[l * n + i] = -2.0 * v[l];
                }
            } else {
                let g = self.model.predict(&th, &rec.covariates).ok()?;
                rss += (&rec.y - g).norm_squared();
            }
        }
        if !rss.is_finite() {
            return None;
        }
        let grad = want_grad.then(|| {
            self.ops.apply_mt(&g_theta) + 2.0 * n as f64 * self.lambda * self.ops.apply_d(gamma)
        });
        Some((rss, grad))
    }
}

impl Objective for TikhonovObjective<'_> {
    fn value(&self, gamma: &DVector<f64>) -> f64 {
        match self.evaluate(gamma, false) {
            Some((rss, _)) => rss + self.penalty(gamma),
            None => f64::INFINITY,
        }
    }

    fn value_and_gradient(&self, gamma: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let (rss, grad) = self.evaluate(gamma, true)?;
        Some((rss + self.penalty(gamma), grad?))
    }
}

struct Refined {
    gamma: DVector<f64>,
    objective: f64,
    stages: Vec<StageReport>,
    degraded: bool,
}

/// AlyLin and Nonlin stages from `gamma0`.
fn refine(obj: &TikhonovObjective, gamma0: DVector<f64>, opts: &FitOptions) -> Refined {
    let mut gamma = gamma0;
    let mut q = obj.value(&gamma);
    let mut stages = Vec::new();
    let mut degraded = false;

    if opts.stages.alylin {
        let start = Instant::now();
        let mut first = None;
        let mut iterations = 0;
        let mut converged = false;
        let mut failed = false;
        while iterations < opts.niter {
            iterations += 1;
            let cand = linearize(obj.model, obj.data, obj.ops, &obj.base, &gamma, obj.lambda)
                .and_then(|prob| solve_gamma(&prob));
            let Ok(cand) = cand else {
                failed = true;
                break;
            };
            // halve toward the current iterate until the objective does not increase
            let step = cand - &gamma;
            let mut accepted = None;
            let mut scale = 1.0;
            for _ in 0..=opts.max_halvings {
                let trial = &gamma + scale * &step;
                let qt = obj.value(&trial);
                if qt.is_finite() && (qt <= q || !q.is_finite()) {
                    accepted = Some((trial, qt));
                    break;
                }
                scale *= 0.5;
            }
            let Some((next, qn)) = accepted else {
                converged = true;
                break;
            };
            let rel = if q.is_finite() { (q - qn).abs() / q.abs().max(f64::MIN_POSITIVE) } else { f64::INFINITY };
            gamma = next;
            q = qn;
            first.get_or_insert(qn);
            if rel < opts.alylin_tolerance {
                converged = true;
                break;
            }
        }
        degraded |= failed || !q.is_finite();
        stages.push(StageReport {
            stage: Stage::AlyLin,
            initial_objective: first.unwrap_or(q),
            objective: q,
            iterations,
            converged,
            elapsed_s: start.elapsed().as_secs_f64(),
        });
    }

    if opts.stages.nonlin {
        let start = Instant::now();
        let rep = quasi_newton(obj, &gamma, &opts.nonlin);
        let initial = q;
        if rep.objective.is_finite() && rep.objective <= q {
            gamma = rep.x;
            q = rep.objective;
        } else {
            degraded = true;
        }
        stages.push(StageReport {
            stage: Stage::Nonlin,
            initial_objective: initial,
            objective: q,
            iterations: rep.iterations,
            converged: rep.converged,
            elapsed_s: start.elapsed().as_secs_f64(),
        });
    }
    Refined { gamma, objective: q, stages, degraded: degraded || !q.is_finite() }
}

fn check_kernel(kernel: &KernelSpec, lambda: f64) -> Result<()> {
    kernel.validate()?;
    if kernel.p() != 4 {
        return Err(Error::Input("kernel must have one component per model parameter (4)".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Input(format!("lambda must be positive and finite, got {lambda}")));
    }
    Ok(())
}

fn finish(
    obj: &TikhonovObjective,
    family: Option<ParametricFamily>,
    mut stages: Vec<StageReport>,
    refined: Refined,
    degraded: bool,
) -> FitResult {
    stages.extend(refined.stages);
    let rss = obj.rss(&refined.gamma).unwrap_or(f64::INFINITY);
    FitResult {
        family,
        rkhs: Some(obj.ops.coefficients(refined.gamma)),
        lambda: Some(obj.lambda),
        objective: refined.objective,
        rss,
        n_obs: obj.data.n() * obj.data.q(),
        stages,
        degraded: degraded || refined.degraded,
    }
}

/// Nonparametric fit started from a given parametric function (steps 1b
/// to 3 of the nonparametric algorithm): the direct RKHS problem with the
/// family values as targets provides the initial coefficients.
pub fn fit_nonparametric_from(
    model: &dyn MechanisticModel,
    data: &Dataset,
    kernel: &KernelSpec,
    lambda: f64,
    init: &ParametricFamily,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_inputs(model, data)?;
    check_kernel(kernel, lambda)?;
    opts.validate()?;
    let covs = data.covariates();
    let ops = assemble_mixed_operators(kernel, &covs)?;
    let obj = TikhonovObjective::new(model, data, &ops, DVector::zeros(4 * data.n()), lambda);

    let start = Instant::now();
    let ages: Vec<f64> = covs.iter().map(|x| x.age).collect();
    let targets = init.stacked_theta(&ages);
    let gamma0 = solve_gamma(&LinearizedProblem::direct(&ops, &targets, lambda)?)?;
    let q0 = obj.value(&gamma0);
    let pardir = StageReport {
        stage: Stage::ParDir,
        initial_objective: q0,
        objective: q0,
        iterations: 1,
        converged: q0.is_finite(),
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    let refined = refine(&obj, gamma0, opts);
    Ok(finish(&obj, None, vec![pardir], refined, false))
}

/// Nonparametric estimator: parametric fit of `init_kind`, direct RKHS
/// problem on its values, linearized iterations, then quasi-Newton.
pub fn fit_nonparametric(
    model: &dyn MechanisticModel,
    data: &Dataset,
    kernel: &KernelSpec,
    lambda: f64,
    init_kind: FamilyKind,
    tau0: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    let par = fit_parametric(model, data, init_kind, tau0, &opts.lm)?;
    let fam = par.family.clone().expect("parametric fit carries a family");
    let mut fit = fit_nonparametric_from(model, data, kernel, lambda, &fam, opts)?;
    let mut stages = par.stages;
    stages.append(&mut fit.stages);
    fit.stages = stages;
    Ok(fit)
}

/// Combined estimator with the parametric part held at `family`; the RKHS
/// part starts at zero.
pub fn fit_combined_from(
    model: &dyn MechanisticModel,
    data: &Dataset,
    family: &ParametricFamily,
    kernel: &KernelSpec,
    lambda: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_inputs(model, data)?;
    check_kernel(kernel, lambda)?;
    opts.validate()?;
    family.validate()?;
    let covs = data.covariates();
    let ops = assemble_mixed_operators(kernel, &covs)?;
    let ages: Vec<f64> = covs.iter().map(|x| x.age).collect();
    let obj = TikhonovObjective::new(model, data, &ops, family.stacked_theta(&ages), lambda);
    let refined = refine(&obj, DVector::zeros(ops.d), opts);
    Ok(finish(&obj, Some(family.clone()), Vec::new(), refined, false))
}

/// Combined parametric/RKHS estimator: parametric fit, then the RKHS
/// correction with the parametric part fixed.
pub fn fit_combined(
    model: &dyn MechanisticModel,
    data: &Dataset,
    kind: FamilyKind,
    kernel: &KernelSpec,
    lambda: f64,
    tau0: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    let par = fit_parametric(model, data, kind, tau0, &opts.lm)?;
    let fam = par.family.clone().expect("parametric fit carries a family");
    let mut fit = fit_combined_from(model, data, &fam, kernel, lambda, opts)?;
    let mut stages = par.stages;
    stages.append(&mut fit.stages);
    fit.stages = stages;
    fit.degraded |= par.degraded;
    Ok(fit)
}

/// Nonparametric fit to the artificial data `G(f_tau(x_i), x_i)` at the
/// covariates of `data`, started from `f_tau` itself.
pub fn fit_smoothed_parametric(
    model: &dyn MechanisticModel,
    data: &Dataset,
    tau_hat: &ParametricFamily,
    kernel: &KernelSpec,
    lambda: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    tau_hat.validate()?;
    let ys = data
        .records
        .iter()
        .map(|r| model.predict(&tau_hat.theta(r.covariates.age), &r.covariates))
        .collect::<Result<Vec<_>>>()?;
    let artificial = data.with_observations(ys);
    fit_nonparametric_from(model, &artificial, kernel, lambda, tau_hat, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Record;
    use crate::kernels::rkhs_norm_sq;
    use crate::model::{Covariates, LinearModel};
    use crate::optimize::finite_diff_gradient;
    use crate::pkmodel::{simulate_dataset, ScenarioSpec};

    fn rich(n: usize, seed: u64) -> (Dataset, crate::pkmodel::PkModel) {
        let sc = ScenarioSpec::rich().with_n(n);
        (simulate_dataset(&sc, &ParametricFamily::table1(), seed).unwrap(), sc.model().unwrap())
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (data, model) = rich(8, 1);
        let ops = assemble_mixed_operators(&KernelSpec::nonparametric(2.0).unwrap(), &data.covariates()).unwrap();
        let obj = TikhonovObjective::new(&model, &data, &ops, DVector::zeros(32), 1e-3);
        let ages: Vec<f64> = data.covariates().iter().map(|x| x.age).collect();
        let targets = ParametricFamily::table1().stacked_theta(&ages);
        let gamma = solve_gamma(&LinearizedProblem::direct(&ops, &targets, 1e-3).unwrap()).unwrap();
        let (_, g) = obj.value_and_gradient(&gamma).unwrap();
        let fd = finite_diff_gradient(|v| obj.value(v), &gamma, 1e-6).unwrap();
        assert!((&g - &fd).norm() <= 1e-4 * g.norm(), "{g} {fd}");
    }

    #[test]
    fn stages_are_monotone() {
        let (data, model) = rich(20, 2);
        let kind = FamilyKind::AffineLinear;
        let fit = fit_nonparametric(
            &model,
            &data,
            &KernelSpec::nonparametric(crate::kernels::DEFAULT_BANDWIDTH_YEARS).unwrap(),
            1e-4,
            kind,
            &kind.default_start(),
            &FitOptions::default(),
        )
        .unwrap();
        let aly = fit.stage(Stage::AlyLin).unwrap();
        let non = fit.stage(Stage::Nonlin).unwrap();
        assert!(aly.objective <= aly.initial_objective);
        assert!(non.objective <= aly.objective);
        assert!(fit.is_usable());
    }

    #[test]
    fn combined_on_null_data_is_zero() {
        let (data, model) = rich(15, 3);
        let fam = ParametricFamily::table1();
        let fit = fit_smoothed_parametric(&model, &data, &fam, &KernelSpec::nonparametric(2.0).unwrap(), 1e-3, &FitOptions::default())
            .unwrap();
        assert!(fit.is_usable());
        let ys = fit.predictions(&model, &data).unwrap();
        let art: Vec<_> = data.records.iter().map(|r| model.predict(&fam.theta(r.covariates.age), &r.covariates).unwrap()).collect();
        let comb = fit_combined_from(&model, &data.with_observations(art), &fam, &KernelSpec::combined(2.0).unwrap(), 1e-3, &FitOptions::default()).unwrap();
        let h = comb.rkhs.as_ref().unwrap();
        let ops = assemble_mixed_operators(&h.spec, &h.train_covariates).unwrap();
        assert!(rkhs_norm_sq(h, &ops).unwrap().sqrt() <= 1e-6);
        assert_eq!(ys.len(), data.n());
    }

    #[test]
    fn direct_problem_equals_kernel_ridge() {
        // G = identity on theta: one linearized solve is exact
        let covs: Vec<Covariates> = (0..6).map(|i| Covariates::new(2.5 * i as f64 + 0.3, 30.0)).collect();
        let records = covs
            .iter()
            .enumerate()
            .map(|(i, x)| Record {
                id: i,
                covariates: *x,
                y: DVector::from_vec(vec![0.1 + 0.02 * x.age + 0.01 * (i as f64).sin(), 4.0, 0.9, 2.0 + 0.1 * i as f64]),
            })
            .collect();
        let data = Dataset::from_records(records);
        let model = LinearModel::identity(4);
        let kernel = KernelSpec::nonparametric(2.0).unwrap();
        let lambda = 0.01;
        let fam = ParametricFamily::default_start(FamilyKind::AffineLinear);
        let fit = fit_nonparametric_from(&model, &data, &kernel, lambda, &fam, &FitOptions::default()).unwrap();
        let ops = assemble_mixed_operators(&kernel, &covs).unwrap();
        let mut targets = DVector::zeros(24);
        for (i, r) in data.records.iter().enumerate() {
            for l in 0..4 {
                targets[l * 6 + i] = r.y[l];
            }
        }
        let exact = solve_gamma(&LinearizedProblem::direct(&ops, &targets, lambda).unwrap()).unwrap();
        let got = &fit.rkhs.unwrap().gamma;
        assert!((got - &exact).amax() <= 1e-7 * (1.0 + exact.amax()));
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let (data, _model) = rich(10, 4);
        let ops = assemble_mixed_operators(&KernelSpec::nonparametric(2.0).unwrap(), &data.covariates()).unwrap();
        let ages: Vec<f64> = data.covariates().iter().map(|x| x.age).collect();
        let targets = ParametricFamily::table1().stacked_theta(&ages);
        let gamma = solve_gamma(&LinearizedProblem::direct(&ops, &targets, 1e9).unwrap()).unwrap();
        assert!(ops.apply_m(&gamma).amax() < 1e-8);
    }

    #[test]
    fn invalid_lambda_rejected() {
        let (data, model) = rich(5, 5);
        let fam = ParametricFamily::table1();
        assert!(fit_combined_from(&model, &data, &fam, &KernelSpec::combined(2.0).unwrap(), 0.0, &FitOptions::default()).is_err());
    }
}
