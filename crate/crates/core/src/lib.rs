//! Nonparametric goodness-of-fit tests for parametric covariate models in
//! nonlinear inverse problems, with a two-compartment pharmacokinetic
//! simulation study.

// `!(x > 0.0)` is used deliberately so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cv;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod gof;
pub mod invlinear;
pub mod kernels;
pub mod model;
pub mod optimize;
pub mod pkmodel;
pub mod rng;

pub use dataset::{Dataset, Record};
pub use error::{Error, Result};
pub use estimators::{FamilyKind, FitOptions, FitResult, ParametricFamily};
pub use kernels::{KernelSpec, RkhsCoefficients};
pub use model::{Covariates, MechanisticModel};
