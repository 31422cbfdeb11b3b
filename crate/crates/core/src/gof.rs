//! Goodness-of-fit statistics, Monte Carlo calibration and power studies.
//!
//! A statistic compares two fitted covariate functions at the training
//! covariates, either through the model predictions (`T` kinds) or
//! directly on the parameters (`S` kinds). Its null distribution is
//! approximated by refitting everything on synthetic data simulated from
//! the fitted null family with known noise level.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    fit_combined_from, fit_nonparametric_from, fit_parametric, fit_smoothed_parametric, FamilyKind, FitOptions,
    FitResult, ParametricFamily,
};
use crate::kernels::{KernelSpec, DEFAULT_BANDWIDTH_YEARS};
use crate::model::MechanisticModel;
use crate::pkmodel::{simulate_dataset, ScenarioSpec};
use crate::rng::{task_rng, task_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StatisticKind {
    T1,
    #[serde(rename = "T1star")]
    T1Star,
    T2,
    S1,
    #[serde(rename = "S1star")]
    S1Star,
    S2,
}

/// Which fitted function a statistic compares against which.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FitRole {
    Parametric,
    Nonparametric,
    Combined,
    Smoothed,
}

impl StatisticKind {
    pub const ALL: [StatisticKind; 6] = [
        StatisticKind::T1,
        StatisticKind::T1Star,
        StatisticKind::T2,
        StatisticKind::S1,
        StatisticKind::S1Star,
        StatisticKind::S2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StatisticKind::T1 => "T1",
            StatisticKind::T1Star => "T1star",
            StatisticKind::T2 => "T2",
            StatisticKind::S1 => "S1",
            StatisticKind::S1Star => "S1star",
            StatisticKind::S2 => "S2",
        }
    }

    /// Observation space (`T`) or parameter space (`S`).
    pub fn observation_space(self) -> bool {
        matches!(self, StatisticKind::T1 | StatisticKind::T1Star | StatisticKind::T2)
    }

    fn roles(self) -> (FitRole, FitRole) {
        match self {
            StatisticKind::T1 | StatisticKind::S1 => (FitRole::Parametric, FitRole::Nonparametric),
            StatisticKind::T1Star | StatisticKind::S1Star => (FitRole::Smoothed, FitRole::Nonparametric),
            StatisticKind::T2 | StatisticKind::S2 => (FitRole::Parametric, FitRole::Combined),
        }
    }

    fn needs(self, role: FitRole) -> bool {
        let (a, b) = self.roles();
        a == role || b == role
    }
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatisticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StatisticKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s) || k.name().replace("star", "*").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Input(format!("unknown statistic '{s}' (expected T1, T1star, T2, S1, S1star, S2)")))
    }
}

/// Fits on one dataset; the RKHS fits are present when some requested
/// statistic needs them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitBundle {
    pub parametric: FitResult,
    pub nonparametric: Option<FitResult>,
    pub combined: Option<FitResult>,
    pub smoothed: Option<FitResult>,
}

impl FitBundle {
    fn get(&self, role: FitRole) -> Option<&FitResult> {
        match role {
            FitRole::Parametric => Some(&self.parametric),
            FitRole::Nonparametric => self.nonparametric.as_ref(),
            FitRole::Combined => self.combined.as_ref(),
            FitRole::Smoothed => self.smoothed.as_ref(),
        }
    }

    fn all_usable(&self) -> bool {
        self.parametric.objective.is_finite()
            && [&self.nonparametric, &self.combined, &self.smoothed]
                .into_iter()
                .flatten()
                .all(FitResult::is_usable)
    }
}

/// Sum over individuals of the squared distance between the two fits, in
/// observation or parameter space.
pub fn statistic_between(
    model: &dyn MechanisticModel,
    data: &Dataset,
    a: &FitResult,
    b: &FitResult,
    observation_space: bool,
) -> Result<f64> {
    let mut total = 0.0;
    for r in &data.records {
        let ta = a.theta_at(&r.covariates);
        let tb = b.theta_at(&r.covariates);
        total += if observation_space {
            let ga = model.predict(ta.as_slice(), &r.covariates)?;
            let gb = model.predict(tb.as_slice(), &r.covariates)?;
            (ga - gb).norm_squared()
        } else {
            (ta - tb).norm_squared()
        };
    }
    Ok(total)
}

pub fn compute_statistic(
    kind: StatisticKind,
    model: &dyn MechanisticModel,
    data: &Dataset,
    fits: &FitBundle,
) -> Result<f64> {
    let (ra, rb) = kind.roles();
    let a = fits.get(ra).ok_or(Error::MissingFit(kind.name()))?;
    let b = fits.get(rb).ok_or(Error::MissingFit(kind.name()))?;
    statistic_between(model, data, a, b, kind.observation_space())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GofConfig {
    pub family: FamilyKind,
    /// Start for the parametric fit of the observed data; the family
    /// default when absent.
    pub tau0: Option<Vec<f64>>,
    pub kinds: Vec<StatisticKind>,
    pub nonparametric_kernel: KernelSpec,
    pub combined_kernel: KernelSpec,
    pub lambda_nonparametric: f64,
    pub lambda_combined: f64,
    /// Number of Monte Carlo replicates.
    pub m: usize,
    pub alpha: f64,
    /// Known residual standard deviation used for the synthetic data.
    pub sigma: f64,
    pub fit: FitOptions,
    /// Calibration fails when more than this fraction of replicates fail.
    pub max_failure_fraction: f64,
}

impl GofConfig {
    pub fn new(family: FamilyKind, kinds: Vec<StatisticKind>, lambda_nonparametric: f64, lambda_combined: f64, sigma: f64) -> Self {
        Self {
            family,
            tau0: None,
            kinds,
            nonparametric_kernel: KernelSpec::nonparametric(DEFAULT_BANDWIDTH_YEARS).expect("valid default kernel"),
            combined_kernel: KernelSpec::combined(DEFAULT_BANDWIDTH_YEARS).expect("valid default kernel"),
            lambda_nonparametric,
            lambda_combined,
            m: 200,
            alpha: 0.05,
            sigma,
            fit: FitOptions::default(),
            max_failure_fraction: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Input("the number of Monte Carlo replicates M must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Input(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.kinds.is_empty() {
            return Err(Error::Input("no statistic requested".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Input("sigma must be finite and nonnegative".into()));
        }
        if !(self.lambda_nonparametric > 0.0 && self.lambda_combined > 0.0) {
            return Err(Error::Input("lambda values must be positive".into()));
        }
        self.fit.validate()
    }

    fn needs(&self, role: FitRole) -> bool {
        self.kinds.iter().any(|k| k.needs(role))
    }
}

/// Runs every estimator required by the configured statistics, sharing
/// the parametric fit.
pub fn fit_pipeline(model: &dyn MechanisticModel, data: &Dataset, cfg: &GofConfig, tau0: &[f64]) -> Result<FitBundle> {
    let parametric = fit_parametric(model, data, cfg.family, tau0, &cfg.fit.lm)?;
    let fam = parametric.family.clone().expect("parametric fit carries a family");
    fam.validate()?;
    let nonparametric = cfg
        .needs(FitRole::Nonparametric)
        .then(|| fit_nonparametric_from(model, data, &cfg.nonparametric_kernel, cfg.lambda_nonparametric, &fam, &cfg.fit))
        .transpose()?;
    let combined = cfg
        .needs(FitRole::Combined)
        .then(|| fit_combined_from(model, data, &fam, &cfg.combined_kernel, cfg.lambda_combined, &cfg.fit))
        .transpose()?;
    let smoothed = cfg
        .needs(FitRole::Smoothed)
        .then(|| fit_smoothed_parametric(model, data, &fam, &cfg.nonparametric_kernel, cfg.lambda_nonparametric, &cfg.fit))
        .transpose()?;
    Ok(FitBundle { parametric, nonparametric, combined, smoothed })
}

fn statistics(model: &dyn MechanisticModel, data: &Dataset, cfg: &GofConfig, fits: &FitBundle) -> Result<Vec<f64>> {
    cfg.kinds.iter().map(|k| compute_statistic(*k, model, data, fits)).collect()
}

/// Monte Carlo sample of every configured statistic under the fitted null.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullSample {
    /// `values[k]` holds the successful replicates of `cfg.kinds[k]`, in
    /// replicate order.
    pub values: Vec<Vec<f64>>,
    pub failed: usize,
    pub requested: usize,
}

/// Simulates `cfg.m` datasets from `tau_hat` at the covariates of `data`
/// and reruns the whole pipeline on each.
pub fn monte_carlo_null_sample(
    model: &dyn MechanisticModel,
    data: &Dataset,
    tau_hat: &ParametricFamily,
    cfg: &GofConfig,
    master_seed: u64,
) -> Result<NullSample> {
    cfg.validate()?;
    tau_hat.validate()?;
    let means = data
        .records
        .iter()
        .map(|r| model.predict(&tau_hat.theta(r.covariates.age), &r.covariates))
        .collect::<Result<Vec<_>>>()?;
    let replicates: Vec<Option<Vec<f64>>> = (0..cfg.m)
        .into_par_iter()
        .map(|m| {
            let mut rng = task_rng(master_seed, "mc", m as u64);
            let ys: Vec<DVector<f64>> = means
                .iter()
                .map(|g| {
                    g.map(|v| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        v + cfg.sigma * z
                    })
                })
                .collect();
            let synthetic = data.with_observations(ys);
            let fits = fit_pipeline(model, &synthetic, cfg, &tau_hat.tau).ok()?;
            if !fits.all_usable() {
                return None;
            }
            let stats = statistics(model, &synthetic, cfg, &fits).ok()?;
            stats.iter().all(|v| v.is_finite()).then_some(stats)
        })
        .collect();
    let failed = replicates.iter().filter(|r| r.is_none()).count();
    if failed as f64 > cfg.max_failure_fraction * cfg.m as f64 {
        return Err(Error::Calibration { failed, total: cfg.m });
    }
    let mut values = vec![Vec::with_capacity(cfg.m - failed); cfg.kinds.len()];
    for rep in replicates.into_iter().flatten() {
        for (k, v) in rep.into_iter().enumerate() {
            values[k].push(v);
        }
    }
    Ok(NullSample { values, failed, requested: cfg.m })
}

/// Critical value, p-value and decision for an observed statistic.
///
/// The critical value is the order statistic of rank
/// `ceil((1 - alpha)(M + 1))` (infinite if that exceeds M); the null is
/// rejected when the observed value exceeds it.
pub fn decide(observed: f64, sample: &[f64], alpha: f64) -> (f64, f64, bool) {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let rank = ((1.0 - alpha) * (m as f64 + 1.0) - 1e-9).ceil() as usize;
    let critical = if rank >= 1 && rank <= m { sorted[rank - 1] } else { f64::INFINITY };
    let exceed = sorted.iter().filter(|v| **v >= observed).count();
    let p_value = (1 + exceed) as f64 / (m + 1) as f64;
    (critical, p_value, observed > critical)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: StatisticKind,
    pub family: ParametricFamily,
    pub observed: f64,
    pub mc_sample: Vec<f64>,
    #[serde(with = "infinite_as_null")]
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub lambda: f64,
    pub master_seed: u64,
    pub failed_replicates: usize,
}

/// Full test on observed data, one result per configured statistic.
pub fn gof_test(model: &dyn MechanisticModel, data: &Dataset, cfg: &GofConfig, master_seed: u64) -> Result<Vec<TestResult>> {
    cfg.validate()?;
    let tau0 = cfg.tau0.clone().unwrap_or_else(|| cfg.family.default_start());
    let fits = fit_pipeline(model, data, cfg, &tau0)?;
    let observed = statistics(model, data, cfg, &fits)?;
    let tau_hat = fits.parametric.family.clone().expect("parametric fit carries a family");
    let null = monte_carlo_null_sample(model, data, &tau_hat, cfg, master_seed)?;
    Ok(cfg
        .kinds
        .iter()
        .zip(observed)
        .zip(null.values)
        .map(|((&kind, obs), sample)| {
            let (critical_value, p_value, reject) = decide(obs, &sample, cfg.alpha);
            let lambda = match kind.roles().1 {
                FitRole::Combined => cfg.lambda_combined,
                _ => cfg.lambda_nonparametric,
            };
            TestResult {
                kind,
                family: tau_hat.clone(),
                observed: obs,
                mc_sample: sample,
                critical_value,
                p_value,
                reject,
                alpha: cfg.alpha,
                lambda,
                master_seed,
                failed_replicates: null.failed,
            }
        })
        .collect())
}

/// JSON has no infinity; an infinite critical value is written as null.
mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() { s.serialize_f64(*v) } else { s.serialize_none() }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Summary of one statistic on one dataset of a power study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub kind: StatisticKind,
    pub observed: f64,
    #[serde(with = "infinite_as_null")]
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub failed_replicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerRecord {
    pub dataset: usize,
    pub data_seed: u64,
    pub test_seed: u64,
    /// `None` when the test on this dataset failed.
    pub outcomes: Option<Vec<TestOutcome>>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionRate {
    pub kind: StatisticKind,
    pub rate: f64,
    /// Binomial standard error `sqrt(r (1 - r) / n)`.
    pub std_error: f64,
    pub n_datasets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub scenario: String,
    pub family: FamilyKind,
    pub rates: Vec<RejectionRate>,
    pub failed_datasets: usize,
    pub records: Vec<PowerRecord>,
}

impl PowerResult {
    pub fn rate(&self, kind: StatisticKind) -> Option<&RejectionRate> {
        self.rates.iter().find(|r| r.kind == kind)
    }

    /// Per-dataset p-values of one statistic.
    pub fn p_values(&self, kind: StatisticKind) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.outcomes.as_ref())
            .filter_map(|o| o.iter().find(|t| t.kind == kind).map(|t| t.p_value))
            .collect()
    }
}

fn read_records(path: &Path) -> Result<BTreeMap<usize, PowerRecord>> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // a truncated trailing line from an interrupted run is skipped
        if let Ok(rec) = serde_json::from_str::<PowerRecord>(&line) {
            out.insert(rec.dataset, rec);
        }
    }
    Ok(out)
}

/// Simulates `n_datasets` datasets under `truth` and tests each against
/// `cfg.family`.
///
/// With `records_path`, completed records are appended to that JSON-lines
/// file as they finish and already present datasets are skipped; at the
/// end the file is rewritten in dataset order.
pub fn power_study(
    scenario: &ScenarioSpec,
    truth: &ParametricFamily,
    cfg: &GofConfig,
    n_datasets: usize,
    master_seed: u64,
    records_path: Option<&Path>,
) -> Result<PowerResult> {
    scenario.validate()?;
    cfg.validate()?;
    if n_datasets == 0 {
        return Err(Error::Input("n_datasets must be at least 1".into()));
    }
    let model = scenario.model()?;
    let done = match records_path {
        Some(p) => read_records(p)?,
        None => BTreeMap::new(),
    };
    let sink = match records_path {
        Some(p) => {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
            Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?))
        }
        None => None,
    };
    let fresh: Vec<PowerRecord> = (0..n_datasets)
        .filter(|d| !done.contains_key(d))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|d| -> Result<PowerRecord> {
            let data_seed = task_seed(master_seed, "power-dataset", d as u64);
            let test_seed = task_seed(master_seed, "power-test", d as u64);
            let outcome = simulate_dataset(scenario, truth, data_seed).and_then(|data| gof_test(&model, &data, cfg, test_seed));
            let rec = match outcome {
                Ok(results) => PowerRecord {
                    dataset: d,
                    data_seed,
                    test_seed,
                    outcomes: Some(
                        results
                            .into_iter()
                            .map(|t| TestOutcome {
                                kind: t.kind,
                                observed: t.observed,
                                critical_value: t.critical_value,
                                p_value: t.p_value,
                                reject: t.reject,
                                failed_replicates: t.failed_replicates,
                            })
                            .collect(),
                    ),
                    error: None,
                },
                Err(e) => PowerRecord { dataset: d, data_seed, test_seed, outcomes: None, error: Some(e.to_string()) },
            };
            if let Some(sink) = &sink {
                let line = serde_json::to_string(&rec)?;
                let mut f = sink.lock().expect("record sink poisoned");
                writeln!(f, "{line}")?;
                f.flush()?;
            }
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    drop(sink);

    let mut all = done;
    for rec in fresh {
        all.insert(rec.dataset, rec);
    }
    let records: Vec<PowerRecord> = all.into_values().filter(|r| r.dataset < n_datasets).collect();
    if let Some(p) = records_path {
        let mut f = File::create(p)?;
        for rec in &records {
            writeln!(f, "{}", serde_json::to_string(rec)?)?;
        }
    }
    let failed_datasets = records.iter().filter(|r| r.outcomes.is_none()).count();
    let rates = cfg
        .kinds
        .iter()
        .map(|&kind| {
            let decisions: Vec<bool> = records
                .iter()
                .filter_map(|r| r.outcomes.as_ref())
                .filter_map(|o| o.iter().find(|t| t.kind == kind).map(|t| t.reject))
                .collect();
            let n = decisions.len();
            let rate = if n == 0 { f64::NAN } else { decisions.iter().filter(|r| **r).count() as f64 / n as f64 };
            RejectionRate { kind, rate, std_error: (rate * (1.0 - rate) / n.max(1) as f64).sqrt(), n_datasets: n }
        })
        .collect();
    Ok(PowerResult { scenario: scenario.name.clone(), family: cfg.family, rates, failed_datasets, records })
}

/// Long-format CSV of rejection rates:
/// `scenario,family,statistic,rejection_rate,std_error,n_datasets,failed_datasets`.
pub fn write_power_csv<W: Write>(results: &[PowerResult], mut w: W) -> Result<()> {
    writeln!(w, "scenario,family,statistic,rejection_rate,std_error,n_datasets,failed_datasets")?;
    for r in results {
        for rate in &r.rates {
            writeln!(
                w,
                "{},{},{},{:.4},{:.4},{},{}",
                r.scenario, r.family, rate.kind, rate.rate, rate.std_error, rate.n_datasets, r.failed_datasets
            )?;
        }
    }
    Ok(())
}

/// Wide table with one row per family and statistic and one rejection-rate
/// column per scenario.
pub fn write_power_table<W: Write>(results: &[PowerResult], mut w: W) -> Result<()> {
    let mut scenarios: Vec<&str> = Vec::new();
    for r in results {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    let mut rows: BTreeMap<(FamilyKind, StatisticKind), BTreeMap<&str, f64>> = BTreeMap::new();
    for r in results {
        for rate in &r.rates {
            rows.entry((r.family, rate.kind)).or_default().insert(&r.scenario, rate.rate);
        }
    }
    writeln!(w, "family,statistic,{}", scenarios.join(","))?;
    for ((fam, kind), cols) in rows {
        let vals: Vec<String> =
            scenarios.iter().map(|s| cols.get(s).map(|v| format!("{v:.4}")).unwrap_or_default()).collect();
        writeln!(w, "{fam},{kind},{}", vals.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pkmodel::simulate_dataset;

    fn small_setup(n: usize, seed: u64) -> (Dataset, crate::pkmodel::PkModel, GofConfig) {
        let sc = ScenarioSpec::rich().with_n(n);
        let data = simulate_dataset(&sc, &ParametricFamily::table1(), seed).unwrap();
        let mut cfg = GofConfig::new(FamilyKind::SaturableExponential, StatisticKind::ALL.to_vec(), 1e-4, 1.0, 0.1);
        cfg.m = 4;
        (data, sc.model().unwrap(), cfg)
    }

    #[test]
    fn identical_fits_give_zero() {
        let (data, model, cfg) = small_setup(6, 1);
        let fits = fit_pipeline(&model, &data, &cfg, &FamilyKind::SaturableExponential.default_start()).unwrap();
        let f = &fits.parametric;
        assert_eq!(statistic_between(&model, &data, f, f, true).unwrap(), 0.0);
        assert_eq!(statistic_between(&model, &data, f, f, false).unwrap(), 0.0);
        for k in StatisticKind::ALL {
            assert!(compute_statistic(k, &model, &data, &fits).unwrap() >= 0.0);
        }
    }

    #[test]
    fn missing_fit_is_contract_error() {
        let (data, model, mut cfg) = small_setup(6, 2);
        cfg.kinds = vec![StatisticKind::T1];
        let fits = fit_pipeline(&model, &data, &cfg, &FamilyKind::SaturableExponential.default_start()).unwrap();
        let err = compute_statistic(StatisticKind::T2, &model, &data, &fits).unwrap_err();
        assert_eq!(err.kind(), "contract");
    }

    #[test]
    fn two_individual_sum_matches_hand_loop() {
        let (data, model, mut cfg) = small_setup(2, 3);
        cfg.kinds = vec![StatisticKind::T1, StatisticKind::S1];
        let fits = fit_pipeline(&model, &data, &cfg, &FamilyKind::SaturableExponential.default_start()).unwrap();
        let np = fits.nonparametric.as_ref().unwrap();
        let mut t = 0.0;
        let mut s = 0.0;
        for r in &data.records {
            let a = fits.parametric.theta_at(&r.covariates);
            let b = np.theta_at(&r.covariates);
            let ga = model.predict(a.as_slice(), &r.covariates).unwrap();
            let gb = model.predict(b.as_slice(), &r.covariates).unwrap();
            for k in 0..ga.len() {
                t += (ga[k] - gb[k]).powi(2);
            }
            for l in 0..4 {
                s += (a[l] - b[l]).powi(2);
            }
        }
        assert!((compute_statistic(StatisticKind::T1, &model, &data, &fits).unwrap() - t).abs() <= 1e-12 * (1.0 + t));
        assert!((compute_statistic(StatisticKind::S1, &model, &data, &fits).unwrap() - s).abs() <= 1e-12 * (1.0 + s));
    }

    #[test]
    fn decision_rule() {
        let sample: Vec<f64> = (1..=19).map(f64::from).collect();
        // rank ceil(0.95 * 20) = 19
        let (c, p, r) = decide(19.5, &sample, 0.05);
        assert_eq!(c, 19.0);
        assert!(r);
        assert!((p - 1.0 / 20.0).abs() < 1e-15);
        let (_, p, r) = decide(0.0, &sample, 0.05);
        assert!(!r);
        assert_eq!(p, 1.0);
        // too few replicates for the level: never reject
        let (c, _, r) = decide(1e9, &[1.0, 2.0], 0.05);
        assert!(c.is_infinite() && !r);
    }

    #[test]
    fn decision_invariant_under_monotone_transform() {
        let sample: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 * 0.3 + 0.01).collect();
        for obs in [0.5, 7.3, 14.2, 20.0] {
            let (_, p1, r1) = decide(obs, &sample, 0.1);
            let t: Vec<f64> = sample.iter().map(|v| v.ln() * 3.0 + 1.0).collect();
            let (_, p2, r2) = decide(obs.ln() * 3.0 + 1.0, &t, 0.1);
            assert_eq!((p1, r1), (p2, r2));
        }
    }

    #[test]
    fn mc_sample_is_deterministic() {
        let (data, model, mut cfg) = small_setup(8, 4);
        cfg.kinds = vec![StatisticKind::T1];
        cfg.m = 1;
        let fam = ParametricFamily::table1();
        let a = monte_carlo_null_sample(&model, &data, &fam, &cfg, 5).unwrap();
        let b = monte_carlo_null_sample(&model, &data, &fam, &cfg, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_replicates_rejected() {
        let (data, model, mut cfg) = small_setup(5, 5);
        cfg.m = 0;
        assert_eq!(gof_test(&model, &data, &cfg, 1).unwrap_err().kind(), "input");
    }

    #[test]
    fn parse_kinds() {
        for k in StatisticKind::ALL {
            assert_eq!(k.name().parse::<StatisticKind>().unwrap(), k);
        }
        assert_eq!("t1*".parse::<StatisticKind>().unwrap(), StatisticKind::T1Star);
        assert!("T3".parse::<StatisticKind>().is_err());
    }

    #[test]
    fn power_study_resumes() {
        let sc = ScenarioSpec::rich().with_n(6);
        let mut cfg = GofConfig::new(FamilyKind::AffineLinear, vec![StatisticKind::T1], 1e-4, 1.0, 0.1);
        cfg.m = 3;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let first = power_study(&sc, &ParametricFamily::table1(), &cfg, 2, 9, Some(&path)).unwrap();
        let full = power_study(&sc, &ParametricFamily::table1(), &cfg, 3, 9, Some(&path)).unwrap();
        assert_eq!(full.records[..2], first.records[..]);
        let fresh = power_study(&sc, &ParametricFamily::table1(), &cfg, 3, 9, None).unwrap();
        assert_eq!(fresh.records, full.records);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
    }
}
