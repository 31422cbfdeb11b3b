//! Python bindings: scenarios, datasets, the three estimators,
//! cross-validation and the Monte Carlo goodness-of-fit test.
//!
//! Structured results (CV curves, test results) cross the boundary as
//! JSON and come back as plain dicts.

use std::path::PathBuf;

use ::covgof::cv::{cross_validate_lambda, default_grid, CvEstimator};
use ::covgof::dataset::Dataset;
use ::covgof::estimators::{self, FamilyKind, FitOptions, FitResult};
use ::covgof::gof::{gof_test, GofConfig, StatisticKind};
use ::covgof::kernels::{KernelSpec, DEFAULT_BANDWIDTH_YEARS};
use ::covgof::model::Covariates;
use ::covgof::pkmodel::{simulate_dataset, ScenarioSpec};
use ::covgof::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

fn to_py(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e.kind() {
        "input" | "domain" | "config" | "contract" => PyValueError::new_err(msg),
        "io" | "csv" | "json" => PyOSError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn family(name: &str) -> PyResult<FamilyKind> {
    name.parse().map_err(to_py)
}

fn json_to_py(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(PyModule::import(py, "json")?.call_method1("loads", (text,))?.unbind())
}

/// Study design: sampling times, dosing, population size and noise level.
#[pyclass(name = "Scenario", module = "covgof", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: ScenarioSpec,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (preset = "rich", n = None, sigma = None))]
    fn new(preset: &str, n: Option<usize>, sigma: Option<f64>) -> PyResult<Self> {
        let mut inner = ScenarioSpec::preset(preset).map_err(to_py)?;
        if let Some(n) = n {
            inner = inner.with_n(n);
        }
        if let Some(s) = sigma {
            inner = inner.with_sigma(s);
        }
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }
    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }
    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name={:?}, n={}, sigma={})", self.inner.name, self.inner.n, self.inner.sigma)
    }
}

/// Individuals with covariates and log-concentration observations.
#[pyclass(name = "Dataset", module = "covgof", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Simulates from the reference covariate model.
    #[staticmethod]
    #[pyo3(signature = (scenario, seed = 0))]
    fn simulate(scenario: &PyScenario, seed: u64) -> PyResult<Self> {
        let truth = estimators::ParametricFamily::table1();
        Ok(Self { inner: simulate_dataset(&scenario.inner, &truth, seed).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Dataset::load(&path).map_err(to_py)? })
    }

    fn save(&self, directory: PathBuf, stem: &str) -> PyResult<()> {
        self.inner.save(&directory, stem).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }
    #[getter]
    fn ages(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.covariates.age).collect()
    }
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.covariates.weight).collect()
    }
    #[getter]
    fn observations(&self) -> Vec<Vec<f64>> {
        self.inner.records.iter().map(|r| r.y.iter().copied().collect()).collect()
    }
}

/// Fitted covariate model.
#[pyclass(name = "Fit", module = "covgof")]
struct PyFit {
    inner: FitResult,
}

#[pymethods]
impl PyFit {
    /// Parametric coefficients, if the estimator has a parametric part.
    #[getter]
    fn tau(&self) -> Option<Vec<f64>> {
        self.inner.family.as_ref().map(|f| f.tau.clone())
    }
    /// RKHS coefficients, if the estimator has a kernel part.
    #[getter]
    fn gamma(&self) -> Option<Vec<f64>> {
        self.inner.rkhs.as_ref().map(|h| h.gamma.iter().copied().collect())
    }
    #[getter]
    fn lambda_(&self) -> Option<f64> {
        self.inner.lambda
    }
    #[getter]
    fn objective(&self) -> f64 {
        self.inner.objective
    }
    #[getter]
    fn rss(&self) -> f64 {
        self.inner.rss
    }
    #[getter]
    fn mse(&self) -> f64 {
        self.inner.mse()
    }
    #[getter]
    fn degraded(&self) -> bool {
        self.inner.degraded
    }

    /// Reference clearance (mL/day) at each age.
    fn cl_curve(&self, ages: Vec<f64>) -> Vec<f64> {
        self.inner.cl_star_curve(&ages)
    }

    /// Fitted parameter vector `(CL*, V1*, Q*, V2*)` in litres.
    fn theta(&self, age: f64, weight: f64) -> Vec<f64> {
        self.inner.theta_at(&Covariates::new(age, weight)).iter().copied().collect()
    }

    fn stages(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        json_to_py(py, &self.inner.stages)
    }
}

fn kernels(bandwidth: f64) -> PyResult<(KernelSpec, KernelSpec)> {
    Ok((KernelSpec::nonparametric(bandwidth).map_err(to_py)?, KernelSpec::combined(bandwidth).map_err(to_py)?))
}

fn model_of(data: &Dataset) -> PyResult<::covgof::pkmodel::PkModel> {
    data.pk_model().map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (data, family = "satexp", tau0 = None))]
fn fit_parametric(py: Python<'_>, data: &PyDataset, family: &str, tau0: Option<Vec<f64>>) -> PyResult<PyFit> {
    let kind = self::family(family)?;
    let model = model_of(&data.inner)?;
    let tau0 = tau0.unwrap_or_else(|| kind.default_start());
    let opts = FitOptions::default();
    let fit = py.detach(|| estimators::fit_parametric(&model, &data.inner, kind, &tau0, &opts.lm)).map_err(to_py)?;
    Ok(PyFit { inner: fit })
}

#[pyfunction]
#[pyo3(signature = (data, lambda_, family = "affine", bandwidth = DEFAULT_BANDWIDTH_YEARS))]
fn fit_nonparametric(py: Python<'_>, data: &PyDataset, lambda_: f64, family: &str, bandwidth: f64) -> PyResult<PyFit> {
    let kind = self::family(family)?;
    let model = model_of(&data.inner)?;
    let (k, _) = kernels(bandwidth)?;
    let opts = FitOptions::default();
    let fit = py
        .detach(|| estimators::fit_nonparametric(&model, &data.inner, &k, lambda_, kind, &kind.default_start(), &opts))
        .map_err(to_py)?;
    Ok(PyFit { inner: fit })
}

#[pyfunction]
#[pyo3(signature = (data, lambda_, family = "satexp", bandwidth = DEFAULT_BANDWIDTH_YEARS))]
fn fit_combined(py: Python<'_>, data: &PyDataset, lambda_: f64, family: &str, bandwidth: f64) -> PyResult<PyFit> {
    let kind = self::family(family)?;
    let model = model_of(&data.inner)?;
    let (_, k) = kernels(bandwidth)?;
    let opts = FitOptions::default();
    let fit = py
        .detach(|| estimators::fit_combined(&model, &data.inner, kind, &k, lambda_, &kind.default_start(), &opts))
        .map_err(to_py)?;
    Ok(PyFit { inner: fit })
}

/// K-fold cross-validation of the regularization parameter. `estimator`
/// is "nonparametric" or "combined".
#[pyfunction]
#[pyo3(signature = (data, estimator = "nonparametric", family = "affine", grid = None, folds = 5, seed = 0, bandwidth = DEFAULT_BANDWIDTH_YEARS))]
#[allow(clippy::too_many_arguments)]
fn cross_validate(
    py: Python<'_>,
    data: &PyDataset,
    estimator: &str,
    family: &str,
    grid: Option<Vec<f64>>,
    folds: usize,
    seed: u64,
    bandwidth: f64,
) -> PyResult<Py<PyAny>> {
    let kind = self::family(family)?;
    let model = model_of(&data.inner)?;
    let (k_np, k_c) = kernels(bandwidth)?;
    let (est, k) = match estimator {
        "nonparametric" => (CvEstimator::Nonparametric { init_kind: kind, tau0: kind.default_start() }, k_np),
        "combined" => (CvEstimator::Combined { kind, tau0: kind.default_start() }, k_c),
        other => return Err(PyValueError::new_err(format!("unknown estimator '{other}'"))),
    };
    let grid = grid.unwrap_or_else(default_grid);
    let opts = FitOptions::default();
    let res = py.detach(|| cross_validate_lambda(&model, &data.inner, &est, &k, &grid, folds, seed, &opts)).map_err(to_py)?;
    json_to_py(py, &res)
}

/// Monte Carlo goodness-of-fit test of `family`; one dict per statistic.
#[pyfunction]
#[pyo3(signature = (data, family = "satexp", statistics = vec!["T1".to_string(), "T2".to_string()], lambda_nonparametric = 1e-3, lambda_combined = 1.0, m = 200, alpha = 0.05, seed = 0, sigma = None, bandwidth = DEFAULT_BANDWIDTH_YEARS))]
#[allow(clippy::too_many_arguments)]
fn test(
    py: Python<'_>,
    data: &PyDataset,
    family: &str,
    statistics: Vec<String>,
    lambda_nonparametric: f64,
    lambda_combined: f64,
    m: usize,
    alpha: f64,
    seed: u64,
    sigma: Option<f64>,
    bandwidth: f64,
) -> PyResult<Py<PyAny>> {
    let kind = self::family(family)?;
    let kinds = statistics.iter().map(|s| s.parse::<StatisticKind>()).collect::<Result<Vec<_>, _>>().map_err(to_py)?;
    let model = model_of(&data.inner)?;
    let sigma = match sigma {
        Some(s) => s,
        None => data.inner.scenario().map_err(to_py)?.sigma,
    };
    let (k_np, k_c) = kernels(bandwidth)?;
    let mut cfg = GofConfig::new(kind, kinds, lambda_nonparametric, lambda_combined, sigma);
    cfg.nonparametric_kernel = k_np;
    cfg.combined_kernel = k_c;
    cfg.m = m;
    cfg.alpha = alpha;
    let results = py.detach(|| gof_test(&model, &data.inner, &cfg, seed)).map_err(to_py)?;
    json_to_py(py, &results)
}

#[pymodule]
#[pyo3(name = "covgof")]
fn covgof_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(fit_parametric, m)?)?;
    m.add_function(wrap_pyfunction!(fit_nonparametric, m)?)?;
    m.add_function(wrap_pyfunction!(fit_combined, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(test, m)?)?;
    m.add("DEFAULT_BANDWIDTH_YEARS", DEFAULT_BANDWIDTH_YEARS)?;
    Ok(())
}
