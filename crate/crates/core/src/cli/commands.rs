use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::bench::{run_benchmark, summarize, write_bench_csv, BenchRecord, BenchSettings, BenchSummary};
use super::config::{EstimatorKind, LambdaChoice, Provenance, RunConfig};
use crate::cv::{cross_validate_lambda, pilot_lambdas, CvEstimator, CvResult};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{fit_combined, fit_nonparametric, fit_parametric, FamilyKind, FitResult, ParametricFamily};
use crate::gof::{gof_test, power_study, write_power_csv, write_power_table, GofConfig, PowerResult, RejectionRate, TestResult};
use crate::model::MechanisticModel;
use crate::pkmodel::{simulate_dataset, ScenarioSpec};
use crate::rng::task_seed;

/// Ages of the fitted clearance curve: 0 to 20 years in steps of 0.25.
pub fn curve_ages() -> Vec<f64> {
    (0..=80).map(|j| j as f64 * 0.25).collect()
}

/// Appends `config_hash` and `seed` columns to every line of a CSV text.
fn stamp_csv(text: &str, prov: &Provenance) -> String {
    let mut out = String::with_capacity(text.len() + 80 * text.lines().count());
    for (j, line) in text.lines().enumerate() {
        out.push_str(line);
        if j == 0 {
            out.push_str(",config_hash,seed\n");
        } else {
            out.push_str(&format!(",{},{}\n", prov.config_hash, prov.seed));
        }
    }
    out
}

fn write_stamped_csv(path: &Path, prov: &Provenance, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    let text = String::from_utf8(buf).map_err(|e| Error::Input(e.to_string()))?;
    fs::write(path, stamp_csv(&text, prov))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: T,
}

/// Observed data from the configured file, or a dataset simulated from the
/// configured scenario under the reference covariate model.
fn load_or_simulate(cfg: &RunConfig, data: Option<&PathBuf>) -> Result<Dataset> {
    match data {
        Some(p) => Dataset::load(p),
        None => simulate_dataset(&cfg.scenario.resolve()?, &ParametricFamily::table1(), cfg.seed),
    }
}

fn sigma_of(data: &Dataset) -> Result<f64> {
    Ok(data.scenario()?.sigma)
}

pub struct SimulateOutput {
    pub csv: PathBuf,
    pub metadata: PathBuf,
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path, stem: Option<&str>) -> Result<SimulateOutput> {
    let prov = cfg.provenance()?;
    let spec = cfg.scenario.resolve()?;
    let data = simulate_dataset(&spec, &ParametricFamily::table1(), cfg.seed)?;
    fs::create_dir_all(out)?;
    let stem = stem.map(str::to_string).unwrap_or_else(|| format!("{}_seed{}", spec.name, cfg.seed));
    let csv = out.join(format!("{stem}.csv"));
    let metadata = out.join(format!("{stem}.json"));
    data.write_csv(fs::File::create(&csv)?)?;
    let meta = data.meta.as_ref().expect("simulated data carries metadata");
    write_json(&metadata, &Stamped { provenance: &prov, body: meta })?;
    println!("wrote {} individuals x {} time points to {}", data.n(), data.q(), csv.display());
    Ok(SimulateOutput { csv, metadata })
}

fn cv_estimator(kind: EstimatorKind, family: FamilyKind, tau0: Vec<f64>) -> Result<CvEstimator> {
    match kind {
        EstimatorKind::Nonparametric => Ok(CvEstimator::Nonparametric { init_kind: family, tau0 }),
        EstimatorKind::Combined => Ok(CvEstimator::Combined { kind: family, tau0 }),
        EstimatorKind::Parametric => Err(Error::Config("the parametric estimator has no regularization parameter".into())),
    }
}

fn run_cv(cfg: &RunConfig, model: &dyn MechanisticModel, data: &Dataset, estimator: &CvEstimator) -> Result<CvResult> {
    let kernel = match estimator {
        CvEstimator::Nonparametric { .. } => cfg.kernel.nonparametric_kernel()?,
        CvEstimator::Combined { .. } => cfg.kernel.combined_kernel()?,
    };
    let fold_seed = task_seed(cfg.seed, "cv", 0);
    cross_validate_lambda(model, data, estimator, &kernel, &cfg.cv.grid, cfg.cv.folds, fold_seed, &cfg.solver)
}

fn write_cv(path: &Path, prov: &Provenance, res: &CvResult) -> Result<()> {
    write_stamped_csv(path, prov, |buf| res.write_csv(buf))
}

#[derive(Serialize)]
pub struct FitReport {
    pub estimator: EstimatorKind,
    pub family: FamilyKind,
    pub lambda: Option<f64>,
    pub cv: Option<CvResult>,
    /// Fitted parameters of the parametric part.
    pub tau_hat: Option<Vec<f64>>,
    /// Mixed coefficients of the RKHS part.
    pub gamma_hat: Option<Vec<f64>>,
    pub mse: f64,
    pub sigma2: Option<f64>,
    pub result: FitResult,
}

pub fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<FitReport> {
    let prov = cfg.provenance()?;
    let est = &cfg.estimator;
    let data = load_or_simulate(cfg, est.data.as_ref())?;
    let model = data.pk_model()?;
    let tau0 = est.tau0.clone().unwrap_or_else(|| est.family.default_start());
    fs::create_dir_all(out)?;

    let (lambda, cv) = match (est.kind, est.lambda) {
        (EstimatorKind::Parametric, _) => (None, None),
        (_, LambdaChoice::Value(l)) => (Some(l), None),
        (kind, LambdaChoice::Keyword(_)) => {
            let res = run_cv(cfg, &model, &data, &cv_estimator(kind, est.family, tau0.clone())?)?;
            write_cv(&out.join("cv.csv"), &prov, &res)?;
            (Some(res.selected), Some(res))
        }
    };
    let result = match est.kind {
        EstimatorKind::Parametric => fit_parametric(&model, &data, est.family, &tau0, &cfg.solver.lm)?,
        EstimatorKind::Nonparametric => fit_nonparametric(
            &model,
            &data,
            &cfg.kernel.nonparametric_kernel()?,
            lambda.expect("lambda resolved"),
            est.family,
            &tau0,
            &cfg.solver,
        )?,
        EstimatorKind::Combined => fit_combined(
            &model,
            &data,
            est.family,
            &cfg.kernel.combined_kernel()?,
            lambda.expect("lambda resolved"),
            &tau0,
            &cfg.solver,
        )?,
    };

    let ages = curve_ages();
    let curve = result.cl_star_curve(&ages);
    write_stamped_csv(&out.join("cl_curve.csv"), &prov, |buf| {
        use std::io::Write;
        writeln!(buf, "age_years,cl_star_ml_per_day")?;
        for (a, c) in ages.iter().zip(&curve) {
            writeln!(buf, "{a},{c:e}")?;
        }
        Ok(())
    })?;

    let report = FitReport {
        estimator: est.kind,
        family: est.family,
        lambda,
        cv,
        tau_hat: result.family.as_ref().map(|f| f.tau.clone()),
        gamma_hat: result.rkhs.as_ref().map(|h| h.gamma.as_slice().to_vec()),
        mse: result.mse(),
        sigma2: data.scenario().ok().map(|s| s.sigma * s.sigma),
        result,
    };
    write_json(&out.join("fit.json"), &Stamped { provenance: &prov, body: &report })?;
    println!(
        "{:?} fit: mse={:.6e} lambda={} degraded={}",
        report.estimator,
        report.mse,
        report.lambda.map_or("none".into(), |l| format!("{l:e}")),
        report.result.degraded
    );
    Ok(report)
}

pub fn cmd_cv(cfg: &RunConfig, out: &Path) -> Result<CvResult> {
    let prov = cfg.provenance()?;
    let est = &cfg.estimator;
    let data = load_or_simulate(cfg, est.data.as_ref())?;
    let model = data.pk_model()?;
    let tau0 = est.tau0.clone().unwrap_or_else(|| est.family.default_start());
    let res = run_cv(cfg, &model, &data, &cv_estimator(est.kind, est.family, tau0)?)?;
    fs::create_dir_all(out)?;
    write_cv(&out.join("cv.csv"), &prov, &res)?;
    write_json(&out.join("cv.json"), &Stamped { provenance: &prov, body: &res })?;
    println!("selected lambda {:e}", res.selected);
    Ok(res)
}

#[derive(Serialize)]
pub struct TestReport {
    pub lambda_nonparametric: f64,
    pub lambda_combined: f64,
    pub results: Vec<TestResult>,
}

fn resolve_lambda(choice: LambdaChoice, cv: impl FnOnce() -> Result<f64>) -> Result<f64> {
    match choice {
        LambdaChoice::Value(v) => Ok(v),
        LambdaChoice::Keyword(_) => cv(),
    }
}

pub fn cmd_test(cfg: &RunConfig, out: &Path) -> Result<TestReport> {
    let prov = cfg.provenance()?;
    let t = &cfg.test;
    let data = load_or_simulate(cfg, t.data.as_ref())?;
    let model = data.pk_model()?;
    let tau0 = t.family.default_start();
    let lambda_nonparametric = resolve_lambda(t.lambda_nonparametric, || {
        let est = CvEstimator::Nonparametric { init_kind: t.family, tau0: tau0.clone() };
        Ok(run_cv(cfg, &model, &data, &est)?.selected)
    })?;
    let lambda_combined = resolve_lambda(t.lambda_combined, || {
        let est = CvEstimator::Combined { kind: t.family, tau0: tau0.clone() };
        Ok(run_cv(cfg, &model, &data, &est)?.selected)
    })?;
    let gcfg = gof_config(cfg, t.family, t.statistics.clone(), lambda_nonparametric, lambda_combined, sigma_of(&data)?, t.m, t.alpha)?;
    let results = gof_test(&model, &data, &gcfg, cfg.seed)?;
    for r in &results {
        println!(
            "{} family={} observed={:.6e} critical={:.6e} p={:.4} reject={}",
            r.kind, t.family, r.observed, r.critical_value, r.p_value, r.reject
        );
    }
    let report = TestReport { lambda_nonparametric, lambda_combined, results };
    fs::create_dir_all(out)?;
    write_json(&out.join("test.json"), &Stamped { provenance: &prov, body: &report })?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn gof_config(
    cfg: &RunConfig,
    family: FamilyKind,
    kinds: Vec<crate::gof::StatisticKind>,
    lambda_nonparametric: f64,
    lambda_combined: f64,
    sigma: f64,
    m: Option<usize>,
    alpha: f64,
) -> Result<GofConfig> {
    let mut g = GofConfig::new(family, kinds, lambda_nonparametric, lambda_combined, sigma);
    g.nonparametric_kernel = cfg.kernel.nonparametric_kernel()?;
    g.combined_kernel = cfg.kernel.combined_kernel()?;
    g.m = m.ok_or_else(|| Error::Config("number of Monte Carlo replicates unresolved".into()))?;
    g.alpha = alpha;
    g.fit = cfg.solver.clone();
    Ok(g)
}

#[derive(Clone, Debug, Serialize)]
pub struct PowerRun {
    pub scenario: String,
    pub family: FamilyKind,
    pub lambda_nonparametric: f64,
    pub lambda_combined: f64,
    pub failed_datasets: usize,
    pub rates: Vec<RejectionRate>,
}

fn power_scenario(cfg: &RunConfig, name: &str) -> Result<ScenarioSpec> {
    let spec = ScenarioSpec::preset(name)?;
    Ok(match cfg.scenario.n {
        Some(n) => spec.with_n(n),
        None => spec,
    })
}

/// Guards resumption: records of a run with a different configuration
/// must not be mixed into this one.
fn prepare_records(path: &Path, prov: &Provenance, resume: bool) -> Result<()> {
    let stamp = path.with_extension("hash");
    if !resume {
        for p in [path, stamp.as_path()] {
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
    } else if path.exists() {
        let previous = fs::read_to_string(&stamp).unwrap_or_default();
        if previous.trim() != prov.config_hash {
            return Err(Error::Config(format!(
                "{} was produced by a different configuration; rerun with --no-resume to discard it",
                path.display()
            )));
        }
    }
    fs::write(&stamp, format!("{}\n", prov.config_hash))?;
    Ok(())
}

pub fn cmd_power(cfg: &RunConfig, out: &Path) -> Result<Vec<PowerRun>> {
    let prov = cfg.provenance()?;
    let p = &cfg.power;
    let n_datasets = p.n_datasets.ok_or_else(|| Error::Config("n_datasets unresolved".into()))?;
    let truth = ParametricFamily::table1();
    let dir = out.join("power");
    fs::create_dir_all(&dir)?;
    let mut results: Vec<PowerResult> = Vec::new();
    let mut runs = Vec::new();
    for name in &p.scenarios {
        let spec = power_scenario(cfg, name)?;
        // every family of a scenario is tested on the same datasets
        let master = task_seed(cfg.seed, &format!("power-{name}"), 0);
        for &family in &p.families {
            let pilot = if matches!(p.lambda_nonparametric, LambdaChoice::Keyword(_))
                || matches!(p.lambda_combined, LambdaChoice::Keyword(_))
            {
                Some(pilot_lambdas(
                    &spec,
                    &truth,
                    family,
                    &cfg.kernel.nonparametric_kernel()?,
                    &cfg.kernel.combined_kernel()?,
                    &cfg.cv.grid,
                    cfg.cv.folds,
                    cfg.seed,
                    &cfg.solver,
                )?)
            } else {
                None
            };
            let l_np = resolve_lambda(p.lambda_nonparametric, || Ok(pilot.as_ref().expect("pilot run").nonparametric.selected))?;
            let l_c = resolve_lambda(p.lambda_combined, || Ok(pilot.as_ref().expect("pilot run").combined.selected))?;
            let gcfg = gof_config(cfg, family, p.statistics.clone(), l_np, l_c, spec.sigma, p.m, p.alpha)?;
            let records = dir.join(format!("{}_{}.jsonl", spec.name, family.short_name()));
            prepare_records(&records, &prov, p.resume)?;
            let res = power_study(&spec, &truth, &gcfg, n_datasets, master, Some(&records))?;
            for r in &res.rates {
                println!(
                    "{} {} {}: rejection rate {:.3} (se {:.3}, {} datasets)",
                    spec.name, family, r.kind, r.rate, r.std_error, r.n_datasets
                );
            }
            runs.push(PowerRun {
                scenario: spec.name.clone(),
                family,
                lambda_nonparametric: l_np,
                lambda_combined: l_c,
                failed_datasets: res.failed_datasets,
                rates: res.rates.clone(),
            });
            results.push(res);
        }
    }
    write_stamped_csv(&out.join("power_rates.csv"), &prov, |buf| write_power_csv(&results, buf))?;
    write_stamped_csv(&out.join("power_table.csv"), &prov, |buf| write_power_table(&results, buf))?;
    write_json(&out.join("power.json"), &Stamped { provenance: &prov, body: serde_json::json!({ "runs": &runs }) })?;
    Ok(runs)
}

pub struct BenchOutput {
    pub records: Vec<BenchRecord>,
    pub summary: Vec<BenchSummary>,
}

pub fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<BenchOutput> {
    let prov = cfg.provenance()?;
    let b = &cfg.bench;
    let mut settings = BenchSettings::new(
        cfg.kernel.nonparametric_kernel()?,
        cfg.kernel.combined_kernel()?,
        b.lambda_nonparametric,
        b.lambda_combined,
    );
    settings.init_family = b.init_family;
    settings.combined_family = b.combined_family;
    settings.fit = cfg.solver.clone();
    let mut records = Vec::new();
    for name in &b.scenarios {
        let spec = power_scenario(cfg, name)?;
        let master = task_seed(cfg.seed, &format!("bench-{name}"), 0);
        records.extend(run_benchmark(&spec, &ParametricFamily::table1(), &settings, &b.algorithms, b.n_datasets, master)?);
    }
    let summary = summarize(&records);
    fs::create_dir_all(out)?;
    write_stamped_csv(&out.join("bench.csv"), &prov, |buf| write_bench_csv(&records, buf))?;
    write_json(&out.join("bench_summary.json"), &Stamped { provenance: &prov, body: serde_json::json!({ "summary": &summary }) })?;
    for s in &summary {
        println!(
            "{} {}: median runtime {:.3}s, median mse {:.4e}, {}/{} within 1.2 sigma^2",
            s.scenario, s.algorithm, s.median_runtime_s, s.median_mse, s.near_noise_level, s.runs
        );
    }
    Ok(BenchOutput { records, summary })
}
