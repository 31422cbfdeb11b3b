//! Surrogate weight-for-age model.
//!
//! Median weight follows a Hill curve from 3.5 kg at birth towards a 70 kg
//! asymptote; individual weights are lognormal around the median.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightModel {
    pub birth_weight: f64,
    pub gain: f64,
    pub hill: f64,
    pub half_age: f64,
    /// Coefficient of variation of the lognormal spread.
    pub cv: f64,
}

impl Default for WeightModel {
    fn default() -> Self {
        Self { birth_weight: 3.5, gain: 66.5, hill: 1.4, half_age: 9.0, cv: 0.15 }
    }
}

impl WeightModel {
    pub fn median(&self, age: f64) -> f64 {
        let a = age.max(0.0).powf(self.hill);
        self.birth_weight + self.gain * a / (a + self.half_age.powf(self.hill))
    }

    pub fn log_sd(&self) -> f64 {
        (1.0 + self.cv * self.cv).ln().sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, age: f64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.median(age) * (self.log_sd() * z).exp()
    }
}

pub fn weight_for_age<R: Rng + ?Sized>(age: f64, rng: &mut R) -> f64 {
    WeightModel::default().sample(age, rng)
}
