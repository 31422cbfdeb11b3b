use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DosingSchedule, PkModel, WeightModel};
use crate::dataset::{Dataset, DatasetMeta, Record};
use crate::error::{Error, Result};
use crate::estimators::ParametricFamily;
use crate::model::{Covariates, MechanisticModel};
use crate::rng::task_rng;

const RICH_TIMES: [f64; 8] = [0.5, 1.0, 2.0, 3.0, 4.0, 7.0, 14.0, 21.0];
const SPARSE_TIMES: [f64; 5] = [1.0, 2.0, 4.0, 7.0, 21.0];
const MULTI_EXTRA: [f64; 6] = [40.0, 55.0, 70.0, 85.0, 100.0, 115.0];

/// Study design: number of individuals, residual sd on the log scale,
/// sampling times and dosing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub n: usize,
    pub sigma: f64,
    pub times: Vec<f64>,
    #[serde(default)]
    pub schedule: DosingSchedule,
    #[serde(default)]
    pub weight_model: WeightModel,
    /// Upper end of the uniform age distribution, years.
    #[serde(default = "default_max_age")]
    pub max_age: f64,
}

fn default_max_age() -> f64 {
    20.0
}

impl ScenarioSpec {
    fn build(name: &str, n: usize, sigma: f64, times: Vec<f64>, n_doses: usize) -> Self {
        Self {
            name: name.to_string(),
            n,
            sigma,
            times,
            schedule: DosingSchedule { n_doses, ..Default::default() },
            weight_model: WeightModel::default(),
            max_age: default_max_age(),
        }
    }

    pub fn rich() -> Self {
        Self::build("rich", 100, 0.1, RICH_TIMES.to_vec(), 1)
    }

    pub fn sparse() -> Self {
        Self::build("sparse", 20, 0.1, SPARSE_TIMES.to_vec(), 1)
    }

    pub fn noisy() -> Self {
        Self::build("noisy", 100, 0.3, RICH_TIMES.to_vec(), 1)
    }

    pub fn multi() -> Self {
        let mut times = RICH_TIMES.to_vec();
        times.extend_from_slice(&MULTI_EXTRA);
        Self::build("multi", 100, 0.3, times, 4)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "rich" => Ok(Self::rich()),
            "sparse" => Ok(Self::sparse()),
            "noisy" => Ok(Self::noisy()),
            "multi" => Ok(Self::multi()),
            other => Err(Error::Input(format!("unknown scenario '{other}'"))),
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.n == 0 || !(self.sigma >= 0.0) || self.times.is_empty() || !(self.max_age > 0.0) {
            return Err(Error::Input(format!("invalid scenario '{}'", self.name)));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<PkModel> {
        PkModel::new(self.schedule, self.times.clone())
    }
}

/// Simulate `n` individuals with uniform ages, surrogate weights and
/// Gaussian noise on the log concentrations.
pub fn simulate_dataset(scenario: &ScenarioSpec, truth: &ParametricFamily, master_seed: u64) -> Result<Dataset> {
    scenario.validate()?;
    truth.validate()?;
    let model = scenario.model()?;
    let mut rng = task_rng(master_seed, "dataset", 0);
    let mut records = Vec::with_capacity(scenario.n);
    for id in 0..scenario.n {
        let age = rng.random::<f64>() * scenario.max_age;
        let weight = scenario.weight_model.sample(age, &mut rng);
        let x = Covariates::new(age, weight);
        let mut y = model.predict(&truth.theta(age), &x)?;
        for v in y.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += scenario.sigma * z;
        }
        records.push(Record { id, covariates: x, y });
    }
    Ok(Dataset {
        records,
        meta: Some(DatasetMeta {
            scenario: scenario.clone(),
            seed: Some(master_seed),
            truth: Some(truth.clone()),
        }),
    })
}
