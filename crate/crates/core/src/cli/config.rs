//! Run configuration.
//!
//! A run is described by a TOML file whose every field is optional; the
//! command-line flags are merged on top. The effective configuration,
//! after defaults are resolved, is hashed together with the master seed
//! and the hash is stamped on every output.
//!
//! ```toml
//! seed = 1
//! paper_scale = false
//!
//! [scenario]
//! preset = "rich"        # rich | sparse | noisy | multi
//! n = 100                # optional override
//! sigma = 0.1            # optional override
//!
//! [estimator]
//! kind = "nonparametric" # parametric | nonparametric | combined
//! family = "affine"      # satexp | affine | mm
//! lambda = "cv"          # or a positive number
//! bandwidth = 1.9165     # years
//!
//! [cv]
//! folds = 5
//! grid = [1e-6, 1e-3, 1.0]
//!
//! [test]
//! family = "satexp"
//! statistics = ["T1", "T2"]
//! m = 200
//! alpha = 0.05
//! lambda_nonparametric = "cv"
//! lambda_combined = "cv"
//!
//! [power]
//! scenarios = ["rich", "sparse", "noisy", "multi"]
//! families = ["satexp", "affine", "mm"]
//! statistics = ["T1", "T2"]
//! n_datasets = 100
//!
//! [bench]
//! scenarios = ["rich"]
//! n_datasets = 25
//! lambda_nonparametric = 1e-3
//! lambda_combined = 1.0
//! ```
//!
//! A `[solver]` table replaces the full set of estimator options and must
//! then be complete.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bench::Algorithm;
use crate::cv::default_grid;
use crate::error::{Error, Result};
use crate::estimators::{FamilyKind, FitOptions};
use crate::gof::StatisticKind;
use crate::kernels::{KernelSpec, DEFAULT_BANDWIDTH_YEARS};
use crate::pkmodel::ScenarioSpec;

pub const SCENARIO_NAMES: [&str; 4] = ["rich", "sparse", "noisy", "multi"];

const DESK_DATASETS: usize = 100;
const DESK_M: usize = 200;
const FULL_SCALE_DATASETS: usize = 500;
const FULL_SCALE_M: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaKeyword {
    Cv,
}

/// A fixed regularization parameter or a request to cross-validate it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaChoice {
    Value(f64),
    Keyword(LambdaKeyword),
}

impl LambdaChoice {
    pub const CV: LambdaChoice = LambdaChoice::Keyword(LambdaKeyword::Cv);

    pub fn fixed(self) -> Option<f64> {
        match self {
            LambdaChoice::Value(v) => Some(v),
            LambdaChoice::Keyword(_) => None,
        }
    }

    fn validate(self, what: &str) -> Result<()> {
        match self {
            LambdaChoice::Value(v) if !(v > 0.0 && v.is_finite()) => {
                Err(Error::Config(format!("{what} must be positive, got {v}")))
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for LambdaChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("cv") {
            return Ok(Self::CV);
        }
        s.parse::<f64>()
            .map(LambdaChoice::Value)
            .map_err(|_| Error::Input(format!("lambda must be a number or 'cv', got '{s}'")))
    }
}

impl fmt::Display for LambdaChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaChoice::Value(v) => write!(f, "{v}"),
            LambdaChoice::Keyword(_) => f.write_str("cv"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Parametric,
    Nonparametric,
    Combined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: String,
    pub n: Option<usize>,
    pub sigma: Option<f64>,
    /// Full custom design; replaces the preset when present.
    pub custom: Option<ScenarioSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { preset: "rich".into(), n: None, sigma: None, custom: None }
    }
}

impl ScenarioConfig {
    pub fn resolve(&self) -> Result<ScenarioSpec> {
        let mut spec = match &self.custom {
            Some(c) => c.clone(),
            None => ScenarioSpec::preset(&self.preset)?,
        };
        if let Some(n) = self.n {
            spec = spec.with_n(n);
        }
        if let Some(s) = self.sigma {
            spec = spec.with_sigma(s);
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// Family of the parametric fit; initializes the nonparametric fit.
    pub family: FamilyKind,
    pub tau0: Option<Vec<f64>>,
    pub lambda: LambdaChoice,
    /// Observed data; a dataset is simulated from the scenario when absent.
    pub data: Option<PathBuf>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Nonparametric,
            family: FamilyKind::AffineLinear,
            tau0: None,
            lambda: LambdaChoice::CV,
            data: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub bandwidth: f64,
    /// Replaces the default nonparametric kernel.
    pub nonparametric: Option<KernelSpec>,
    /// Replaces the default combined kernel.
    pub combined: Option<KernelSpec>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { bandwidth: DEFAULT_BANDWIDTH_YEARS, nonparametric: None, combined: None }
    }
}

impl KernelConfig {
    pub fn nonparametric_kernel(&self) -> Result<KernelSpec> {
        match &self.nonparametric {
            Some(k) => k.validate().map(|_| k.clone()),
            None => KernelSpec::nonparametric(self.bandwidth),
        }
    }

    pub fn combined_kernel(&self) -> Result<KernelSpec> {
        match &self.combined {
            Some(k) => k.validate().map(|_| k.clone()),
            None => KernelSpec::combined(self.bandwidth),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub grid: Vec<f64>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, grid: default_grid() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub family: FamilyKind,
    pub statistics: Vec<StatisticKind>,
    pub m: Option<usize>,
    pub alpha: f64,
    pub lambda_nonparametric: LambdaChoice,
    pub lambda_combined: LambdaChoice,
    pub data: Option<PathBuf>,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            family: FamilyKind::SaturableExponential,
            statistics: vec![StatisticKind::T1, StatisticKind::T2],
            m: None,
            alpha: 0.05,
            lambda_nonparametric: LambdaChoice::CV,
            lambda_combined: LambdaChoice::CV,
            data: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub scenarios: Vec<String>,
    pub families: Vec<FamilyKind>,
    pub statistics: Vec<StatisticKind>,
    pub n_datasets: Option<usize>,
    pub m: Option<usize>,
    pub alpha: f64,
    pub lambda_nonparametric: LambdaChoice,
    pub lambda_combined: LambdaChoice,
    /// Skip datasets already present in the records of an earlier run.
    pub resume: bool,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            scenarios: SCENARIO_NAMES.iter().map(|s| s.to_string()).collect(),
            families: FamilyKind::ALL.to_vec(),
            statistics: vec![StatisticKind::T1, StatisticKind::T2],
            n_datasets: None,
            m: None,
            alpha: 0.05,
            lambda_nonparametric: LambdaChoice::CV,
            lambda_combined: LambdaChoice::CV,
            resume: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub scenarios: Vec<String>,
    pub n_datasets: usize,
    pub algorithms: Vec<Algorithm>,
    /// Family whose fit initializes the nonparametric variants.
    pub init_family: FamilyKind,
    /// Parametric family of the combined variants.
    pub combined_family: FamilyKind,
    pub lambda_nonparametric: f64,
    pub lambda_combined: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            scenarios: vec!["rich".into()],
            n_datasets: 25,
            algorithms: Algorithm::ALL.to_vec(),
            init_family: FamilyKind::AffineLinear,
            combined_family: FamilyKind::AffineLinear,
            lambda_nonparametric: 1e-3,
            lambda_combined: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paper_scale: bool,
    pub scenario: ScenarioConfig,
    pub kernel: KernelConfig,
    pub estimator: EstimatorConfig,
    pub cv: CvConfig,
    pub test: TestConfig,
    pub power: PowerConfig,
    pub bench: BenchConfig,
    pub solver: FitOptions,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn default_m(&self) -> usize {
        if self.paper_scale {
            FULL_SCALE_M
        } else {
            DESK_M
        }
    }

    fn default_datasets(&self) -> usize {
        if self.paper_scale {
            FULL_SCALE_DATASETS
        } else {
            DESK_DATASETS
        }
    }

    /// Fills scale-dependent defaults so that the hash describes the run
    /// that is actually performed.
    pub fn resolve(mut self) -> Result<Self> {
        let m = self.default_m();
        self.test.m.get_or_insert(m);
        self.power.m.get_or_insert(m);
        let nd = self.default_datasets();
        self.power.n_datasets.get_or_insert(nd);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.resolve()?;
        self.kernel.nonparametric_kernel()?;
        self.kernel.combined_kernel()?;
        self.solver.validate()?;
        self.estimator.lambda.validate("estimator.lambda")?;
        for (what, l) in [
            ("test.lambda_nonparametric", self.test.lambda_nonparametric),
            ("test.lambda_combined", self.test.lambda_combined),
            ("power.lambda_nonparametric", self.power.lambda_nonparametric),
            ("power.lambda_combined", self.power.lambda_combined),
            ("bench.lambda_nonparametric", LambdaChoice::Value(self.bench.lambda_nonparametric)),
            ("bench.lambda_combined", LambdaChoice::Value(self.bench.lambda_combined)),
        ] {
            l.validate(what)?;
        }
        if let Some(t) = &self.estimator.tau0 {
            if t.len() != self.estimator.family.n_tau() {
                return Err(Error::Config(format!(
                    "estimator.tau0 has {} entries but {} needs {}",
                    t.len(),
                    self.estimator.family,
                    self.estimator.family.n_tau()
                )));
            }
        }
        if self.cv.folds < 2 || self.cv.grid.is_empty() {
            return Err(Error::Config("cv needs at least 2 folds and a nonempty grid".into()));
        }
        for s in self.power.scenarios.iter().chain(&self.bench.scenarios) {
            if !SCENARIO_NAMES.contains(&s.as_str()) {
                return Err(Error::Config(format!("unknown scenario '{s}'")));
            }
        }
        if self.bench.n_datasets == 0 {
            return Err(Error::Config("bench.n_datasets must be at least 1".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over the canonical JSON form of the configuration.
    pub fn hash(&self) -> Result<String> {
        // serde_json maps are ordered, so this serialization is canonical
        let value = serde_json::to_value(self)?;
        let digest = Sha256::digest(serde_json::to_string(&value)?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn provenance(&self) -> Result<Provenance> {
        Ok(Provenance { config_hash: self.hash()?, seed: self.seed, version: env!("CARGO_PKG_VERSION").to_string() })
    }
}

/// Stamp attached to every output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default().resolve().unwrap();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\n[test]\nstatistics = [\"S1star\"]\nlambda_combined = 0.5\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.test.statistics, vec![StatisticKind::S1Star]);
        assert_eq!(cfg.test.lambda_combined, LambdaChoice::Value(0.5));
        assert_eq!(cfg.test.lambda_nonparametric, LambdaChoice::CV);
        assert_eq!(cfg.scenario.preset, "rich");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("sede = 1\n").unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn hash_tracks_content_and_seed() {
        let a = RunConfig::default().resolve().unwrap();
        let mut b = a.clone();
        b.seed = 2;
        let mut c = a.clone();
        c.test.alpha = 0.1;
        assert_eq!(a.hash().unwrap().len(), 64);
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn scale_defaults() {
        let desk = RunConfig::default().resolve().unwrap();
        assert_eq!((desk.power.n_datasets, desk.power.m, desk.test.m), (Some(100), Some(200), Some(200)));
        let paper = RunConfig { paper_scale: true, ..Default::default() }.resolve().unwrap();
        assert_eq!((paper.power.n_datasets, paper.power.m), (Some(500), Some(500)));
    }

    #[test]
    fn lambda_choice_parsing() {
        assert_eq!("cv".parse::<LambdaChoice>().unwrap(), LambdaChoice::CV);
        assert_eq!("1e-3".parse::<LambdaChoice>().unwrap(), LambdaChoice::Value(1e-3));
        assert!("fast".parse::<LambdaChoice>().is_err());
        let bad = RunConfig { estimator: EstimatorConfig { lambda: LambdaChoice::Value(-1.0), ..Default::default() }, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_scenario_rejected() {
        let mut cfg = RunConfig::default();
        cfg.scenario.preset = "dense".into();
        assert_eq!(cfg.validate().unwrap_err().kind(), "input");
    }
}
