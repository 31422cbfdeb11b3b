//! Solver benchmark: general-purpose optimizers from random starts against
//! the staged nonparametric and combined algorithms.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    fit_combined, fit_nonparametric, FamilyKind, FitOptions, ParametricFamily, StageSelection, TikhonovObjective,
};
use crate::kernels::{assemble_mixed_operators, KernelSpec};
use crate::model::MechanisticModel;
use crate::optimize::{quasi_newton, simulated_annealing, SolverOptions};
use crate::pkmodel::{simulate_dataset, ScenarioSpec};
use crate::rng::{task_rng, task_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Quasi-Newton on the nonparametric objective from random coefficients.
    QnRandom,
    /// Simulated annealing on the same objective from random coefficients.
    SaRandom,
    PardirAlylinNonlin,
    PardirAlylin,
    PardirNonlin,
    ParAlylinNonlin,
    ParAlylin,
    ParNonlin,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::QnRandom,
        Algorithm::SaRandom,
        Algorithm::PardirAlylinNonlin,
        Algorithm::PardirAlylin,
        Algorithm::PardirNonlin,
        Algorithm::ParAlylinNonlin,
        Algorithm::ParAlylin,
        Algorithm::ParNonlin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::QnRandom => "qn-random",
            Algorithm::SaRandom => "sa-random",
            Algorithm::PardirAlylinNonlin => "pardir-alylin-nonlin",
            Algorithm::PardirAlylin => "pardir-alylin",
            Algorithm::PardirNonlin => "pardir-nonlin",
            Algorithm::ParAlylinNonlin => "par-alylin-nonlin",
            Algorithm::ParAlylin => "par-alylin",
            Algorithm::ParNonlin => "par-nonlin",
        }
    }

    fn stages(self) -> StageSelection {
        match self {
            Algorithm::PardirAlylin | Algorithm::ParAlylin => StageSelection { alylin: true, nonlin: false },
            Algorithm::PardirNonlin | Algorithm::ParNonlin => StageSelection { alylin: false, nonlin: true },
            _ => StageSelection::default(),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Input(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub nonparametric_kernel: KernelSpec,
    pub combined_kernel: KernelSpec,
    pub lambda_nonparametric: f64,
    pub lambda_combined: f64,
    pub init_family: FamilyKind,
    pub combined_family: FamilyKind,
    pub fit: FitOptions,
    pub quasi_newton: SolverOptions,
    pub annealing: SolverOptions,
}

impl BenchSettings {
    pub fn new(nonparametric_kernel: KernelSpec, combined_kernel: KernelSpec, lambda_nonparametric: f64, lambda_combined: f64) -> Self {
        Self {
            nonparametric_kernel,
            combined_kernel,
            lambda_nonparametric,
            lambda_combined,
            init_family: FamilyKind::AffineLinear,
            combined_family: FamilyKind::AffineLinear,
            fit: FitOptions::default(),
            quasi_newton: SolverOptions::quasi_newton(),
            annealing: SolverOptions::annealing(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub scenario: String,
    pub algorithm: Algorithm,
    pub dataset: usize,
    /// Seed of the random start.
    pub seed: u64,
    pub runtime_s: f64,
    /// Mean squared residual; infinite when the run failed.
    pub mse: f64,
    pub sigma2: f64,
    pub converged: bool,
}

/// Lognormal multiplicative perturbation with unit log-variance.
fn perturb<R: Rng>(center: &[f64], rng: &mut R) -> Vec<f64> {
    center.iter().map(|c| c * rng.sample::<f64, _>(StandardNormal).exp()).collect()
}

/// Runs one algorithm on one dataset. Failures are recorded as an infinite
/// MSE rather than an error, since failing is an outcome being measured.
pub fn run_algorithm(
    algorithm: Algorithm,
    model: &dyn MechanisticModel,
    data: &Dataset,
    settings: &BenchSettings,
    seed: u64,
) -> (f64, f64, bool) {
    let n_obs = (data.n() * data.q()).max(1) as f64;
    let mut rng = task_rng(seed, "bench-start", 0);
    let start = Instant::now();
    let (mse, converged) = match algorithm {
        Algorithm::QnRandom | Algorithm::SaRandom => {
            let mut run = || -> Option<(f64, bool)> {
                let ops = assemble_mixed_operators(&settings.nonparametric_kernel, &data.covariates()).ok()?;
                let obj = TikhonovObjective::new(model, data, &ops, DVector::zeros(4 * data.n()), settings.lambda_nonparametric);
                let x0 = DVector::from_vec(perturb(&vec![1.0; ops.d], &mut rng));
                let report = if algorithm == Algorithm::QnRandom {
                    quasi_newton(&obj, &x0, &settings.quasi_newton)
                } else {
                    let opts = SolverOptions { seed: task_seed(seed, "bench-anneal", 0), ..settings.annealing.clone() };
                    simulated_annealing(&obj, &x0, &opts)
                };
                Some((obj.rss(&report.x)? / n_obs, report.converged))
            };
            run().unwrap_or((f64::INFINITY, false))
        }
        _ => {
            let opts = FitOptions { stages: algorithm.stages(), ..settings.fit.clone() };
            let fit = if matches!(algorithm, Algorithm::PardirAlylinNonlin | Algorithm::PardirAlylin | Algorithm::PardirNonlin) {
                let tau0 = perturb(&settings.init_family.default_start(), &mut rng);
                fit_nonparametric(
                    model,
                    data,
                    &settings.nonparametric_kernel,
                    settings.lambda_nonparametric,
                    settings.init_family,
                    &tau0,
                    &opts,
                )
            } else {
                let tau0 = perturb(&settings.combined_family.default_start(), &mut rng);
                fit_combined(
                    model,
                    data,
                    settings.combined_family,
                    &settings.combined_kernel,
                    settings.lambda_combined,
                    &tau0,
                    &opts,
                )
            };
            match fit {
                Ok(f) if f.rss.is_finite() => (f.mse(), !f.degraded),
                _ => (f64::INFINITY, false),
            }
        }
    };
    (start.elapsed().as_secs_f64(), mse, converged)
}

/// Benchmarks `algorithms` on `n_datasets` datasets simulated under
/// `truth`. Datasets run in parallel; the algorithms on one dataset run
/// sequentially so that their timings are comparable.
pub fn run_benchmark(
    scenario: &ScenarioSpec,
    truth: &ParametricFamily,
    settings: &BenchSettings,
    algorithms: &[Algorithm],
    n_datasets: usize,
    master_seed: u64,
) -> Result<Vec<BenchRecord>> {
    scenario.validate()?;
    settings.fit.validate()?;
    let model = scenario.model()?;
    let sigma2 = scenario.sigma * scenario.sigma;
    let per_dataset: Vec<Result<Vec<BenchRecord>>> = (0..n_datasets)
        .into_par_iter()
        .map(|d| {
            let data = simulate_dataset(scenario, truth, task_seed(master_seed, "bench-dataset", d as u64))?;
            let seed = task_seed(master_seed, "bench-start", d as u64);
            Ok(algorithms
                .iter()
                .map(|&algorithm| {
                    let (runtime_s, mse, converged) = run_algorithm(algorithm, &model, &data, settings, seed);
                    BenchRecord { scenario: scenario.name.clone(), algorithm, dataset: d, seed, runtime_s, mse, sigma2, converged }
                })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(n_datasets * algorithms.len());
    for r in per_dataset {
        out.extend(r?);
    }
    Ok(out)
}

/// Median of a sample; infinite values sort last.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub scenario: String,
    pub algorithm: Algorithm,
    pub runs: usize,
    pub median_runtime_s: f64,
    pub median_mse: f64,
    /// Runs with `mse <= 1.2 sigma^2`.
    pub near_noise_level: usize,
}

pub fn summarize(records: &[BenchRecord]) -> Vec<BenchSummary> {
    let mut keys: Vec<(String, Algorithm)> = records.iter().map(|r| (r.scenario.clone(), r.algorithm)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(scenario, algorithm)| {
            let rs: Vec<&BenchRecord> = records.iter().filter(|r| r.scenario == scenario && r.algorithm == algorithm).collect();
            let times: Vec<f64> = rs.iter().map(|r| r.runtime_s).collect();
            let mses: Vec<f64> = rs.iter().map(|r| r.mse).collect();
            BenchSummary {
                median_runtime_s: median(&times),
                median_mse: median(&mses),
                near_noise_level: rs.iter().filter(|r| r.mse <= 1.2 * r.sigma2).count(),
                runs: rs.len(),
                scenario,
                algorithm,
            }
        })
        .collect()
}

/// CSV with columns `scenario,algorithm,dataset,seed,runtime_s,mse,sigma2,converged`.
pub fn write_bench_csv<W: Write>(records: &[BenchRecord], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DEFAULT_BANDWIDTH_YEARS;

    fn settings() -> BenchSettings {
        BenchSettings::new(
            KernelSpec::nonparametric(DEFAULT_BANDWIDTH_YEARS).unwrap(),
            KernelSpec::combined(DEFAULT_BANDWIDTH_YEARS).unwrap(),
            1e-3,
            1.0,
        )
    }

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.name()));
        }
        assert!("newton".parse::<Algorithm>().is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, 2.0]), 2.0);
    }

    #[test]
    fn staged_runs_are_deterministic() {
        let sc = ScenarioSpec::rich().with_n(12);
        let algs = [Algorithm::PardirAlylin, Algorithm::ParAlylin];
        let a = run_benchmark(&sc, &ParametricFamily::table1(), &settings(), &algs, 2, 3).unwrap();
        let b = run_benchmark(&sc, &ParametricFamily::table1(), &settings(), &algs, 2, 3).unwrap();
        assert_eq!(a.len(), 4);
        let mses = |r: &[BenchRecord]| r.iter().map(|x| x.mse).collect::<Vec<_>>();
        assert_eq!(mses(&a), mses(&b));
        assert!(a.iter().all(|r| r.mse.is_finite() && (r.sigma2 - 0.01).abs() < 1e-15));
        let mut buf = Vec::new();
        write_bench_csv(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("scenario,algorithm,dataset,seed,runtime_s,mse,sigma2,converged\n"));
        assert!(text.contains(",pardir-alylin,"));
    }
}
