//! k-fold cross-validation of the regularization parameter.
//!
//! Folds are formed over individuals. For every (fold, lambda) cell the
//! estimator is fitted on the remaining individuals and scored by the
//! held-out observation-space squared error. The parametric step that
//! starts both RKHS estimators does not depend on lambda and is shared
//! across the grid.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    fit_combined_from, fit_nonparametric_from, fit_parametric, FamilyKind, FitOptions, FitResult, ParametricFamily,
};
use crate::kernels::KernelSpec;
use crate::model::MechanisticModel;
use crate::pkmodel::{simulate_dataset, ScenarioSpec};
use crate::rng::{task_rng, task_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum CvEstimator {
    /// Nonparametric estimator started from a fit of `init_kind`.
    Nonparametric { init_kind: FamilyKind, tau0: Vec<f64> },
    /// Combined estimator for the family `kind`.
    Combined { kind: FamilyKind, tau0: Vec<f64> },
}

impl CvEstimator {
    fn start(&self) -> (FamilyKind, &[f64]) {
        match self {
            CvEstimator::Nonparametric { init_kind, tau0 } => (*init_kind, tau0),
            CvEstimator::Combined { kind, tau0 } => (*kind, tau0),
        }
    }

    fn fit(
        &self,
        model: &dyn MechanisticModel,
        data: &Dataset,
        family: &ParametricFamily,
        kernel: &KernelSpec,
        lambda: f64,
        opts: &FitOptions,
    ) -> Result<FitResult> {
        match self {
            CvEstimator::Nonparametric { .. } => fit_nonparametric_from(model, data, kernel, lambda, family, opts),
            CvEstimator::Combined { .. } => fit_combined_from(model, data, family, kernel, lambda, opts),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub grid: Vec<f64>,
    /// Fold-averaged held-out error, `None` for disqualified grid points.
    pub mean_error: Vec<Option<f64>>,
    pub std_error: Vec<Option<f64>>,
    pub selected: f64,
    pub k: usize,
    pub seed: u64,
    /// Fold index of every individual.
    pub folds: Vec<usize>,
}

impl CvResult {
    /// CSV with columns `lambda, mean_error, se` (empty for disqualified
    /// points).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lambda,mean_error,se")?;
        for ((l, m), s) in self.grid.iter().zip(&self.mean_error).zip(&self.std_error) {
            let fmt = |v: &Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            writeln!(w, "{l:e},{},{}", fmt(m), fmt(s))?;
        }
        Ok(())
    }
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count).map(|j| 10f64.powf(a + (b - a) * j as f64 / (count - 1) as f64)).collect()
}

/// 13 points from 1e-6 to 1e3.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-6, 1e3, 13)
}

/// Seeded shuffle of individuals dealt round-robin into `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut task_rng(seed, "cv-folds", 0));
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    folds
}

fn held_out_error(model: &dyn MechanisticModel, fit: &FitResult, test: &Dataset) -> Option<f64> {
    if !fit.is_usable() {
        return None;
    }
    let mut err = 0.0;
    for r in &test.records {
        let g = model.predict(fit.theta_at(&r.covariates).as_slice(), &r.covariates).ok()?;
        err += (&r.y - g).norm_squared();
    }
    err.is_finite().then_some(err)
}

#[allow(clippy::too_many_arguments)]
pub fn cross_validate_lambda(
    model: &dyn MechanisticModel,
    data: &Dataset,
    estimator: &CvEstimator,
    kernel: &KernelSpec,
    grid: &[f64],
    k: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<CvResult> {
    data.validate()?;
    let n = data.n();
    if k < 2 || n < k {
        return Err(Error::Input(format!("need 2 <= k <= n, got k={k}, n={n}")));
    }
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Input("lambda grid must be nonempty, positive and strictly increasing".into()));
    }
    let folds = fold_assignment(n, k, seed);
    let (kind, tau0) = estimator.start();
    let splits: Vec<(Dataset, Dataset)> = (0..k)
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            (data.subset(&train), data.subset(&test))
        })
        .collect();
    let starts: Vec<Option<ParametricFamily>> = splits
        .par_iter()
        .map(|(train, _)| {
            fit_parametric(model, train, kind, tau0, &opts.lm).ok().and_then(|f| f.family)
        })
        .collect();
    let cells: Vec<(usize, usize)> = (0..grid.len()).flat_map(|j| (0..k).map(move |f| (j, f))).collect();
    let errors: Vec<Option<f64>> = cells
        .par_iter()
        .map(|&(j, f)| {
            let fam = starts[f].as_ref()?;
            let (train, test) = &splits[f];
            let fit = estimator.fit(model, train, fam, kernel, grid[j], opts).ok()?;
            held_out_error(model, &fit, test)
        })
        .collect();

    let mut mean_error = Vec::with_capacity(grid.len());
    let mut std_error = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let cell: Option<Vec<f64>> = errors[j * k..(j + 1) * k].iter().copied().collect();
        match cell {
            Some(v) => {
                let m = v.iter().sum::<f64>() / k as f64;
                let var = v.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (k - 1) as f64;
                mean_error.push(Some(m));
                std_error.push(Some((var / k as f64).sqrt()));
            }
            None => {
                mean_error.push(None);
                std_error.push(None);
            }
        }
    }
    // ties go to the larger lambda
    let mut best: Option<(usize, f64)> = None;
    for (j, m) in mean_error.iter().enumerate() {
        if let Some(m) = *m {
            if best.is_none_or(|(_, b)| m <= b) {
                best = Some((j, m));
            }
        }
    }
    let (j, _) = best.ok_or_else(|| Error::Input("every lambda in the grid was disqualified by failed fits".into()))?;
    Ok(CvResult { grid: grid.to_vec(), mean_error, std_error, selected: grid[j], k, seed, folds })
}

/// Regularization parameters picked by cross-validation on one pilot
/// dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotLambdas {
    pub family: FamilyKind,
    pub nonparametric: CvResult,
    pub combined: CvResult,
}

/// Simulates a pilot dataset for `scenario` under `truth` and cross-validates
/// the nonparametric (started from `family`) and combined estimators on it.
///
/// The pilot seed depends on the master seed and the scenario name only, so
/// every family of a study sees the same pilot data.
#[allow(clippy::too_many_arguments)]
pub fn pilot_lambdas(
    scenario: &ScenarioSpec,
    truth: &ParametricFamily,
    family: FamilyKind,
    nonparametric_kernel: &KernelSpec,
    combined_kernel: &KernelSpec,
    grid: &[f64],
    k: usize,
    master_seed: u64,
    opts: &FitOptions,
) -> Result<PilotLambdas> {
    let pilot = simulate_dataset(scenario, truth, task_seed(master_seed, &format!("pilot-{}", scenario.name), 0))?;
    let model = scenario.model()?;
    let fold_seed = task_seed(master_seed, "pilot-folds", 0);
    let tau0 = family.default_start();
    let np = CvEstimator::Nonparametric { init_kind: family, tau0: tau0.clone() };
    let nonparametric = cross_validate_lambda(&model, &pilot, &np, nonparametric_kernel, grid, k, fold_seed, opts)?;
    let c = CvEstimator::Combined { kind: family, tau0 };
    let combined = cross_validate_lambda(&model, &pilot, &c, combined_kernel, grid, k, fold_seed, opts)?;
    Ok(PilotLambdas { family, nonparametric, combined })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_individuals() {
        let folds = fold_assignment(23, 5, 9);
        let mut counts = [0usize; 5];
        for f in &folds {
            counts[*f] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 23);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert_eq!(folds, fold_assignment(23, 5, 9));
        assert_ne!(folds, fold_assignment(23, 5, 10));
    }

    #[test]
    fn grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 13);
        assert!((g[0] - 1e-6).abs() < 1e-18 && (g[12] - 1e3).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_point_grid_is_selected() {
        let sc = ScenarioSpec::rich().with_n(15);
        let data = simulate_dataset(&sc, &ParametricFamily::table1(), 1).unwrap();
        let model = sc.model().unwrap();
        let est = CvEstimator::Combined { kind: FamilyKind::AffineLinear, tau0: FamilyKind::AffineLinear.default_start() };
        let kernel = KernelSpec::combined(crate::kernels::DEFAULT_BANDWIDTH_YEARS).unwrap();
        let res = cross_validate_lambda(&model, &data, &est, &kernel, &[0.01], 3, 4, &FitOptions::default()).unwrap();
        assert_eq!(res.selected, 0.01);
        assert!(res.mean_error[0].unwrap() >= 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let sc = ScenarioSpec::rich().with_n(3);
        let data = simulate_dataset(&sc, &ParametricFamily::table1(), 1).unwrap();
        let model = sc.model().unwrap();
        let est = CvEstimator::Combined { kind: FamilyKind::AffineLinear, tau0: FamilyKind::AffineLinear.default_start() };
        let kernel = KernelSpec::combined(2.0).unwrap();
        let opts = FitOptions::default();
        assert!(cross_validate_lambda(&model, &data, &est, &kernel, &[0.1], 1, 0, &opts).is_err());
        assert!(cross_validate_lambda(&model, &data, &est, &kernel, &[0.1], 4, 0, &opts).is_err());
        assert!(cross_validate_lambda(&model, &data, &est, &kernel, &[0.1, 0.01], 2, 0, &opts).is_err());
    }
}
