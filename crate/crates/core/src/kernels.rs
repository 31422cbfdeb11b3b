//! Diagonal matrix-valued kernels on the age covariate, their Gram
//! matrices, and the mixed primal/dual parametrization of RKHS functions.
//!
//! Coefficient vectors `gamma` are laid out component by component. A dual
//! component contributes `n` kernel-section weights (one per training
//! individual), a primal component contributes the `d_l` weights of its
//! finite feature map. Parameter vectors evaluated at the training points
//! are stacked the same way: `theta[l * n + i]` is component `l` at
//! individual `i`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Covariates;

/// 100 weeks expressed in years.
pub const DEFAULT_BANDWIDTH_YEARS: f64 = 100.0 / 52.1775;

/// Finite-dimensional feature maps on age.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case")]
pub enum FeatureMap {
    /// `phi(a) = (1, a, ..., a^degree)`.
    Polynomial { degree: usize },
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Polynomial { degree } => degree + 1,
        }
    }

    pub fn features(&self, age: f64) -> Vec<f64> {
        match self {
            FeatureMap::Polynomial { degree } => {
                let mut out = Vec::with_capacity(degree + 1);
                let mut v = 1.0;
                for _ in 0..=*degree {
                    out.push(v);
                    v *= age;
                }
                out
            }
        }
    }
}

/// Scalar kernel for one parameter component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarKernelSpec {
    /// `exp(-(a - a')^2 / (2 b^2))`, bandwidth in years.
    Gaussian { bandwidth: f64 },
    Constant,
    FiniteFeature { features: FeatureMap },
    /// Identically zero kernel: the component carries no RKHS part.
    Zero,
}

impl ScalarKernelSpec {
    pub fn gaussian(bandwidth: f64) -> Self {
        ScalarKernelSpec::Gaussian { bandwidth }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScalarKernelSpec::Gaussian { bandwidth } if !(bandwidth.is_finite() && *bandwidth > 0.0) => {
                Err(Error::Input(format!("gaussian bandwidth must be positive, got {bandwidth}")))
            }
            _ => Ok(()),
        }
    }

    /// Constant kernels become the degree-0 polynomial feature map.
    pub fn canonical(&self) -> Self {
        match self {
            ScalarKernelSpec::Constant => ScalarKernelSpec::FiniteFeature {
                features: FeatureMap::Polynomial { degree: 0 },
            },
            other => other.clone(),
        }
    }

    pub fn eval(&self, a: f64, a2: f64) -> f64 {
        match self {
            ScalarKernelSpec::Gaussian { bandwidth } => {
                let d = a - a2;
                (-(d * d) / (2.0 * bandwidth * bandwidth)).exp()
            }
            ScalarKernelSpec::Constant => 1.0,
            ScalarKernelSpec::FiniteFeature { features } => features
                .features(a)
                .iter()
                .zip(features.features(a2))
                .map(|(u, v)| u * v)
                .sum(),
            ScalarKernelSpec::Zero => 0.0,
        }
    }

    /// Dimension of the finite feature map, `None` if there is none.
    pub fn feature_dim(&self) -> Option<usize> {
        match self {
            ScalarKernelSpec::Gaussian { .. } => None,
            ScalarKernelSpec::Constant => Some(1),
            ScalarKernelSpec::FiniteFeature { features } => Some(features.dim()),
            ScalarKernelSpec::Zero => Some(0),
        }
    }

    pub fn features(&self, age: f64) -> Option<Vec<f64>> {
        match self {
            ScalarKernelSpec::Gaussian { .. } => None,
            ScalarKernelSpec::Constant => Some(vec![1.0]),
            ScalarKernelSpec::FiniteFeature { features } => Some(features.features(age)),
            ScalarKernelSpec::Zero => Some(Vec::new()),
        }
    }
}

/// Whether a component is parametrized by feature weights or by kernel
/// sections at the training points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Primal,
    Dual,
}

/// Diagonal matrix-valued kernel `diag(k_1, ..., k_p)` with a primal/dual
/// partition of its components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub components: Vec<ScalarKernelSpec>,
    pub roles: Vec<Role>,
}

impl KernelSpec {
    /// Gaussian components are dual, everything else primal.
    pub fn new(components: Vec<ScalarKernelSpec>) -> Result<Self> {
        let roles = components
            .iter()
            .map(|c| if c.feature_dim().is_some() { Role::Primal } else { Role::Dual })
            .collect();
        Self::with_roles(components, roles)
    }

    pub fn with_roles(components: Vec<ScalarKernelSpec>, roles: Vec<Role>) -> Result<Self> {
        let spec = Self { components, roles };
        spec.validate()?;
        Ok(spec)
    }

    /// Every component in dual form.
    pub fn fully_dual(components: Vec<ScalarKernelSpec>) -> Result<Self> {
        let roles = vec![Role::Dual; components.len()];
        Self::with_roles(components, roles)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Input("kernel needs at least one component".into()));
        }
        if self.roles.len() != self.components.len() {
            return Err(Error::Input("one role per kernel component required".into()));
        }
        for (c, r) in self.components.iter().zip(&self.roles) {
            c.validate()?;
            if *r == Role::Primal && c.feature_dim().is_none() {
                return Err(Error::Input("gaussian components must be dual".into()));
            }
        }
        Ok(())
    }

    /// Gaussian kernel on clearance, constant kernels on the three
    /// age-independent parameters.
    pub fn nonparametric(bandwidth: f64) -> Result<Self> {
        Self::new(vec![
            ScalarKernelSpec::gaussian(bandwidth),
            ScalarKernelSpec::Constant,
            ScalarKernelSpec::Constant,
            ScalarKernelSpec::Constant,
        ])
    }

    /// Gaussian kernel on clearance only; the remaining components are
    /// carried by the parametric part.
    pub fn combined(bandwidth: f64) -> Result<Self> {
        Self::new(vec![
            ScalarKernelSpec::gaussian(bandwidth),
            ScalarKernelSpec::Zero,
            ScalarKernelSpec::Zero,
            ScalarKernelSpec::Zero,
        ])
    }

    pub fn p(&self) -> usize {
        self.components.len()
    }

    pub fn canonical(&self) -> Self {
        Self {
            components: self.components.iter().map(|c| c.canonical()).collect(),
            roles: self.roles.clone(),
        }
    }

    /// Number of coefficients contributed by component `l`.
    pub fn block_dim(&self, l: usize, n: usize) -> usize {
        match self.roles[l] {
            Role::Dual => n,
            Role::Primal => self.components[l].feature_dim().unwrap_or(0),
        }
    }

    /// `d = n |D| + sum_{l in P} d_l`.
    pub fn mixed_dimension(&self, n: usize) -> usize {
        (0..self.p()).map(|l| self.block_dim(l, n)).sum()
    }

    fn block_offsets(&self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.p() + 1);
        let mut acc = 0;
        out.push(0);
        for l in 0..self.p() {
            acc += self.block_dim(l, n);
            out.push(acc);
        }
        out
    }
}

pub fn eval_scalar_kernel(spec: &ScalarKernelSpec, a: f64, a2: f64) -> f64 {
    spec.eval(a, a2)
}

fn check_covariates(covariates: &[Covariates]) -> Result<()> {
    if covariates.is_empty() {
        return Err(Error::Input("at least one covariate record required".into()));
    }
    if let Some(i) = covariates.iter().position(|x| !x.age.is_finite() || !x.weight.is_finite()) {
        return Err(Error::Input(format!("non-finite covariate in record {i}")));
    }
    Ok(())
}

fn gram(kernel: &ScalarKernelSpec, covariates: &[Covariates]) -> DMatrix<f64> {
    let n = covariates.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(covariates[i].age, covariates[j].age);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Block-diagonal np×np kernel matrix `diag(K_11, ..., K_pp)`.
pub fn assemble_kernel_matrix(spec: &KernelSpec, covariates: &[Covariates]) -> Result<DMatrix<f64>> {
    check_covariates(covariates)?;
    let n = covariates.len();
    let p = spec.p();
    let mut k = DMatrix::zeros(n * p, n * p);
    for (l, c) in spec.components.iter().enumerate() {
        k.view_mut((l * n, l * n), (n, n)).copy_from(&gram(c, covariates));
    }
    Ok(k)
}

/// The matrices of the mixed formulation for a fixed set of training
/// covariates: regularizer `D`, parameter map `P`, and `M = P D` with
/// `theta = M gamma`.
#[derive(Clone, Debug)]
pub struct MixedOperators {
    pub spec: KernelSpec,
    pub covariates: Vec<Covariates>,
    pub n: usize,
    pub d: usize,
    /// Start of each component block in `gamma`, length p + 1.
    pub offsets: Vec<usize>,
    pub dmat: DMatrix<f64>,
    pub pmat: DMatrix<f64>,
    pub mmat: DMatrix<f64>,
    /// Gram blocks `K_ll` of the dual components.
    pub kernel_blocks: Vec<Option<DMatrix<f64>>>,
    /// Nonzeros of each row of `P` (row index `l * n + i`).
    pub p_rows: Vec<Vec<(usize, f64)>>,
}

pub fn assemble_mixed_operators(spec: &KernelSpec, covariates: &[Covariates]) -> Result<MixedOperators> {
    spec.validate()?;
    check_covariates(covariates)?;
    let n = covariates.len();
    let p = spec.p();
    let offsets = spec.block_offsets(n);
    let d = offsets[p];
    let mut dmat = DMatrix::zeros(d, d);
    let mut pmat = DMatrix::zeros(n * p, d);
    let mut kernel_blocks = Vec::with_capacity(p);
    for l in 0..p {
        let off = offsets[l];
        match spec.roles[l] {
            Role::Dual => {
                let k = gram(&spec.components[l], covariates);
                dmat.view_mut((off, off), (n, n)).copy_from(&k);
                for i in 0..n {
                    pmat[(l * n + i, off + i)] = 1.0;
                }
                kernel_blocks.push(Some(k));
            }
            Role::Primal => {
                let dl = offsets[l + 1] - off;
                for j in 0..dl {
                    dmat[(off + j, off + j)] = 1.0;
                }
                for (i, x) in covariates.iter().enumerate() {
                    let phi = spec.components[l].features(x.age).unwrap_or_default();
                    for (j, v) in phi.into_iter().enumerate() {
                        pmat[(l * n + i, off + j)] = v;
                    }
                }
                kernel_blocks.push(None);
            }
        }
    }
    let mmat = &pmat * &dmat;
    let p_rows = (0..n * p)
        .map(|r| {
            pmat.row(r)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(c, v)| (c, *v))
                .collect()
        })
        .collect();
    Ok(MixedOperators {
        spec: spec.clone(),
        covariates: covariates.to_vec(),
        n,
        d,
        offsets,
        dmat,
        pmat,
        mmat,
        kernel_blocks,
        p_rows,
    })
}

impl MixedOperators {
    pub fn p(&self) -> usize {
        self.spec.p()
    }

    /// Stacked parameter values at the training points, `M gamma`.
    pub fn apply_m(&self, gamma: &DVector<f64>) -> DVector<f64> {
        &self.mmat * gamma
    }

    /// `M^T v` for an np-vector `v`.
    pub fn apply_mt(&self, v: &DVector<f64>) -> DVector<f64> {
        self.mmat.tr_mul(v)
    }

    pub fn apply_d(&self, gamma: &DVector<f64>) -> DVector<f64> {
        &self.dmat * gamma
    }

    /// `gamma^T D gamma`.
    pub fn norm_sq(&self, gamma: &DVector<f64>) -> f64 {
        gamma.dot(&self.apply_d(gamma))
    }

    /// Parameter vector of individual `i` from a stacked np-vector.
    pub fn unstack(&self, stacked: &DVector<f64>, i: usize) -> Vec<f64> {
        (0..self.p()).map(|l| stacked[l * self.n + i]).collect()
    }

    pub fn coefficients(&self, gamma: DVector<f64>) -> RkhsCoefficients {
        RkhsCoefficients {
            gamma,
            spec: self.spec.clone(),
            train_covariates: self.covariates.clone(),
        }
    }
}

/// An RKHS function in mixed parametrization together with the training
/// covariates its dual components refer to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RkhsCoefficients {
    pub gamma: DVector<f64>,
    pub spec: KernelSpec,
    pub train_covariates: Vec<Covariates>,
}

impl RkhsCoefficients {
    pub fn zeros(spec: &KernelSpec, train_covariates: &[Covariates]) -> Self {
        let d = spec.mixed_dimension(train_covariates.len());
        Self {
            gamma: DVector::zeros(d),
            spec: spec.clone(),
            train_covariates: train_covariates.to_vec(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let d = self.spec.mixed_dimension(self.train_covariates.len());
        if self.gamma.len() != d {
            return Err(Error::Input(format!(
                "coefficient length {} does not match mixed dimension {d}",
                self.gamma.len()
            )));
        }
        Ok(())
    }

    /// Block of `gamma` belonging to component `l`.
    pub fn block(&self, l: usize) -> &[f64] {
        let n = self.train_covariates.len();
        let start: usize = (0..l).map(|m| self.spec.block_dim(m, n)).sum();
        let len = self.spec.block_dim(l, n);
        &self.gamma.as_slice()[start..start + len]
    }

    pub fn eval(&self, x: &Covariates) -> DVector<f64> {
        let p = self.spec.p();
        let mut out = DVector::zeros(p);
        for l in 0..p {
            let coef = self.block(l);
            let comp = &self.spec.components[l];
            out[l] = match self.spec.roles[l] {
                Role::Dual => self
                    .train_covariates
                    .iter()
                    .zip(coef)
                    .map(|(xi, a)| comp.eval(x.age, xi.age) * a)
                    .sum(),
                Role::Primal => comp
                    .features(x.age)
                    .unwrap_or_default()
                    .iter()
                    .zip(coef)
                    .map(|(f, b)| f * b)
                    .sum(),
            };
        }
        out
    }

    /// Equivalent coefficients with every component in dual form.
    ///
    /// A primal block `beta_l` is replaced by the minimum-norm `alpha_l`
    /// with `Phi_l^T alpha_l = beta_l`; this requires `Phi_l` to have full
    /// column rank.
    pub fn to_dual(&self) -> Result<RkhsCoefficients> {
        let n = self.train_covariates.len();
        let p = self.spec.p();
        let mut gamma = Vec::with_capacity(n * p);
        for l in 0..p {
            match self.spec.roles[l] {
                Role::Dual => gamma.extend_from_slice(self.block(l)),
                Role::Primal => {
                    let dl = self.spec.block_dim(l, n);
                    if dl == 0 {
                        gamma.extend(std::iter::repeat_n(0.0, n));
                        continue;
                    }
                    let comp = &self.spec.components[l];
                    let mut phi = DMatrix::zeros(n, dl);
                    for (i, x) in self.train_covariates.iter().enumerate() {
                        for (j, v) in comp.features(x.age).unwrap_or_default().into_iter().enumerate() {
                            phi[(i, j)] = v;
                        }
                    }
                    let beta = DVector::from_column_slice(self.block(l));
                    let gram = phi.tr_mul(&phi);
                    let w = gram
                        .lu()
                        .solve(&beta)
                        .ok_or(Error::Singular { condition: f64::INFINITY })?;
                    gamma.extend((phi * w).iter());
                }
            }
        }
        let spec = KernelSpec::fully_dual(self.spec.components.clone())?;
        Ok(RkhsCoefficients {
            gamma: DVector::from_vec(gamma),
            spec,
            train_covariates: self.train_covariates.clone(),
        })
    }
}

/// `gamma^T D gamma`, the squared RKHS norm of the represented function.
pub fn rkhs_norm_sq(coeffs: &RkhsCoefficients, ops: &MixedOperators) -> Result<f64> {
    if coeffs.gamma.len() != ops.d {
        return Err(Error::Input("coefficient and operator dimensions differ".into()));
    }
    Ok(ops.norm_sq(&coeffs.gamma))
}

/// Smallest eigenvalue must not fall below `-rel_tol` times the spectral
/// radius.
pub fn is_psd(matrix: &DMatrix<f64>, rel_tol: f64) -> bool {
    let eig = matrix.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    min >= -rel_tol * max.max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ages(a: &[f64]) -> Vec<Covariates> {
        a.iter().map(|&a| Covariates::new(a, 20.0)).collect()
    }

    #[test]
    fn gaussian_identity_and_constant() {
        let g = ScalarKernelSpec::gaussian(2.0);
        assert_eq!(g.eval(3.3, 3.3), 1.0);
        assert_eq!(ScalarKernelSpec::Constant.eval(0.0, 17.0), 1.0);
    }

    #[test]
    fn gaussian_reference_value() {
        // (0 - 2)^2 / (2 * 2^2) = 0.5
        let v = eval_scalar_kernel(&ScalarKernelSpec::gaussian(2.0), 0.0, 2.0);
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn bandwidth_must_be_positive() {
        assert!(ScalarKernelSpec::gaussian(0.0).validate().is_err());
        assert!(ScalarKernelSpec::gaussian(-1.0).validate().is_err());
        assert!(KernelSpec::new(vec![ScalarKernelSpec::gaussian(f64::NAN)]).is_err());
    }

    #[test]
    fn gaussian_cannot_be_primal() {
        let r = KernelSpec::with_roles(vec![ScalarKernelSpec::gaussian(1.0)], vec![Role::Primal]);
        assert!(r.is_err());
    }

    #[test]
    fn single_record_gives_identity() {
        let spec = KernelSpec::nonparametric(DEFAULT_BANDWIDTH_YEARS).unwrap();
        let k = assemble_kernel_matrix(&spec, &ages(&[4.2])).unwrap();
        assert_eq!(k, DMatrix::identity(4, 4));
    }

    #[test]
    fn two_records_offdiagonal_matches_scalar_kernel() {
        let spec = KernelSpec::nonparametric(1.5).unwrap();
        let k = assemble_kernel_matrix(&spec, &ages(&[1.0, 3.0])).unwrap();
        let expected = eval_scalar_kernel(&spec.components[0], 1.0, 3.0);
        assert_eq!(k[(0, 1)], expected);
        assert_eq!(k[(1, 0)], expected);
        // cross-component blocks vanish
        assert_eq!(k[(0, 2)], 0.0);
        assert_eq!(k[(2, 3)], 1.0);
    }

    #[test]
    fn non_finite_covariate_rejected() {
        let spec = KernelSpec::nonparametric(1.0).unwrap();
        let r = assemble_kernel_matrix(&spec, &ages(&[1.0, f64::NAN]));
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn mixed_dimensions_for_preset_kernels() {
        let cov = ages(&(0..20).map(|i| i as f64).collect::<Vec<_>>());
        let np = assemble_mixed_operators(&KernelSpec::nonparametric(2.0).unwrap(), &cov).unwrap();
        assert_eq!(np.d, 23);
        let comb = assemble_mixed_operators(&KernelSpec::combined(2.0).unwrap(), &cov).unwrap();
        assert_eq!(comb.d, 20);
    }

    #[test]
    fn fully_dual_operators_reduce_to_kernel_matrix() {
        let cov = ages(&[0.5, 2.0, 7.0, 11.0]);
        let comps = KernelSpec::nonparametric(2.0).unwrap().components;
        let spec = KernelSpec::fully_dual(comps).unwrap();
        let ops = assemble_mixed_operators(&spec, &cov).unwrap();
        let k = assemble_kernel_matrix(&spec, &cov).unwrap();
        assert_eq!(ops.dmat, k);
        assert_eq!(ops.pmat, DMatrix::identity(16, 16));
        assert_eq!(ops.mmat, ops.pmat.clone() * ops.dmat.clone());
    }

    #[test]
    fn zero_coefficients_evaluate_to_zero() {
        let spec = KernelSpec::nonparametric(2.0).unwrap();
        let c = RkhsCoefficients::zeros(&spec, &ages(&[1.0, 5.0, 9.0]));
        assert_eq!(c.eval(&Covariates::new(3.0, 10.0)), DVector::zeros(4));
    }

    #[test]
    fn constant_component_returns_beta() {
        let spec = KernelSpec::nonparametric(2.0).unwrap();
        let cov = ages(&[1.0, 5.0, 9.0]);
        let mut c = RkhsCoefficients::zeros(&spec, &cov);
        c.gamma[3] = 4.09; // first primal block follows the n dual weights
        for a in [0.0, 3.7, 19.0] {
            assert_eq!(c.eval(&Covariates::new(a, 50.0))[1], 4.09);
        }
    }

    #[test]
    fn norm_of_zero_and_scaling() {
        let spec = KernelSpec::nonparametric(2.0).unwrap();
        let cov = ages(&[1.0, 2.5, 9.0]);
        let ops = assemble_mixed_operators(&spec, &cov).unwrap();
        let mut c = RkhsCoefficients::zeros(&spec, &cov);
        assert_eq!(rkhs_norm_sq(&c, &ops).unwrap(), 0.0);
        c.gamma = DVector::from_vec(vec![0.3, -0.2, 0.7, 1.0, 2.0, -1.5]);
        let base = rkhs_norm_sq(&c, &ops).unwrap();
        c.gamma *= 3.0;
        assert!((rkhs_norm_sq(&c, &ops).unwrap() - 9.0 * base).abs() < 1e-12 * base);
    }

    #[test]
    fn fully_dual_norm_matches_double_loop() {
        let cov = ages(&[0.3, 4.0, 6.5]);
        let spec = KernelSpec::fully_dual(KernelSpec::nonparametric(2.0).unwrap().components).unwrap();
        let ops = assemble_mixed_operators(&spec, &cov).unwrap();
        let alpha: Vec<f64> = (0..12).map(|k| ((k * 7 % 5) as f64 - 2.0) * 0.37).collect();
        let c = RkhsCoefficients { gamma: DVector::from_vec(alpha.clone()), spec: spec.clone(), train_covariates: cov.clone() };
        // sum_{i,j} alpha_j^T k(x_j, x_i) alpha_i with a diagonal kernel
        let mut brute = 0.0;
        for l in 0..4 {
            for i in 0..3 {
                for j in 0..3 {
                    brute += alpha[l * 3 + j] * spec.components[l].eval(cov[j].age, cov[i].age) * alpha[l * 3 + i];
                }
            }
        }
        assert!((rkhs_norm_sq(&c, &ops).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn canonicalization_is_idempotent_and_preserves_values() {
        let spec = KernelSpec::nonparametric(2.0).unwrap();
        let once = spec.canonical();
        assert_eq!(once.canonical(), once);
        for (a, b) in [(0.0, 1.0), (3.0, 12.5), (20.0, 20.0)] {
            for l in 0..4 {
                assert_eq!(spec.components[l].eval(a, b), once.components[l].eval(a, b));
            }
        }
    }

    fn brute_force_gram(spec: &KernelSpec, cov: &[Covariates]) -> DMatrix<f64> {
        let n = cov.len();
        let p = spec.p();
        let mut k = DMatrix::zeros(n * p, n * p);
        for i in 0..n {
            for j in 0..n {
                for l in 0..p {
                    for m in 0..p {
                        // diagonal matrix-valued kernel: k_lm = delta_lm k_l
                        let v = if l == m { spec.components[l].eval(cov[i].age, cov[j].age) } else { 0.0 };
                        k[(l * n + i, m * n + j)] = v;
                    }
                }
            }
        }
        k
    }

    proptest! {
        #[test]
        fn kernel_matrix_matches_brute_force(raw in proptest::collection::vec(0.0f64..20.0, 6)) {
            let spec = KernelSpec::nonparametric(DEFAULT_BANDWIDTH_YEARS).unwrap();
            let cov = ages(&raw);
            let k = assemble_kernel_matrix(&spec, &cov).unwrap();
            prop_assert_eq!(k, brute_force_gram(&spec, &cov));
        }

        #[test]
        fn kernel_matrix_symmetric_psd(raw in proptest::collection::vec(0.0f64..20.0, 1..25), b in 0.2f64..5.0) {
            let spec = KernelSpec::new(vec![
                ScalarKernelSpec::gaussian(b),
                ScalarKernelSpec::Constant,
                ScalarKernelSpec::FiniteFeature { features: FeatureMap::Polynomial { degree: 2 } },
            ]).unwrap();
            let k = assemble_kernel_matrix(&spec, &ages(&raw)).unwrap();
            prop_assert_eq!(&k, &k.transpose());
            prop_assert!(is_psd(&k, 1e-10));
        }

        #[test]
        fn gaussian_symmetric_in_unit_interval(a in 0.0f64..20.0, a2 in 0.0f64..20.0, b in 0.1f64..10.0) {
            let g = ScalarKernelSpec::gaussian(b);
            let v = g.eval(a, a2);
            prop_assert_eq!(v, g.eval(a2, a));
            prop_assert!((0.0..=1.0).contains(&v));
            // strictly positive unless the exponent underflows
            if (a - a2).powi(2) / (2.0 * b * b) < 700.0 {
                prop_assert!(v > 0.0);
            }
        }

        #[test]
        fn mixed_dimension_formula(roles in proptest::collection::vec(0u8..4, 1..=6), n in 1usize..=10) {
            // 0: gaussian (dual), 1: constant primal, 2: quadratic primal, 3: constant dual
            let mut comps = Vec::new();
            let mut rs = Vec::new();
            let mut expected = 0;
            for r in &roles {
                match r {
                    0 => { comps.push(ScalarKernelSpec::gaussian(1.0)); rs.push(Role::Dual); expected += n; }
                    1 => { comps.push(ScalarKernelSpec::Constant); rs.push(Role::Primal); expected += 1; }
                    2 => { comps.push(ScalarKernelSpec::FiniteFeature { features: FeatureMap::Polynomial { degree: 2 } }); rs.push(Role::Primal); expected += 3; }
                    _ => { comps.push(ScalarKernelSpec::Constant); rs.push(Role::Dual); expected += n; }
                }
            }
            let spec = KernelSpec::with_roles(comps, rs).unwrap();
            let cov = ages(&(0..n).map(|i| i as f64 * 1.7).collect::<Vec<_>>());
            let ops = assemble_mixed_operators(&spec, &cov).unwrap();
            prop_assert_eq!(ops.d, expected);
            prop_assert_eq!(spec.mixed_dimension(n), expected);
            prop_assert_eq!(ops.mmat.clone(), &ops.pmat * &ops.dmat);
        }
    }
}
