//! Linearized Tikhonov problems in mixed formulation.
//!
//! Around a base function `f* = g* + h*` the forward map is replaced by
//! `G(f*(x_i)) + L(x_i) (h(x_i) - h*(x_i))` with `L(x_i)` the q×p Jacobian.
//! The linearized objective
//!
//! ```text
//! Q(gamma) = || LL M gamma - y_dag ||^2 + n lambda gamma^T D gamma
//! ```
//!
//! is minimized by `(P^T LL^T LL M + n lambda I) gamma = P^T LL^T y_dag`.
//!
//! Stacking: parameters use index `l * n + i`, observations `i * q + k`.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{MixedOperators, RkhsCoefficients};
use crate::model::MechanisticModel;

#[derive(Clone, Debug)]
pub struct LinearizedProblem<'a> {
    /// `L(x_i)`, one q×p matrix per individual.
    pub jacobians: Vec<DMatrix<f64>>,
    /// Stacked pseudo-observations `y_dag`, length n q.
    pub ydagger: DVector<f64>,
    pub ops: &'a MixedOperators,
    pub lambda: f64,
}

/// Linearizes `model` at `base + M gamma_star`.
///
/// `base` holds the stacked values of the fixed parametric part `g*`
/// (zeros when there is none).
pub fn linearize<'a>(
    model: &dyn MechanisticModel,
    data: &Dataset,
    ops: &'a MixedOperators,
    base: &DVector<f64>,
    gamma_star: &DVector<f64>,
    lambda: f64,
) -> Result<LinearizedProblem<'a>> {
    let n = ops.n;
    let p = ops.p();
    if data.n() != n || base.len() != n * p || gamma_star.len() != ops.d {
        return Err(Error::Input("linearization inputs have inconsistent dimensions".into()));
    }
    let q = data.q();
    let h_star = ops.apply_m(gamma_star);
    let mut jacobians = Vec::with_capacity(n);
    let mut ydagger = DVector::zeros(n * q);
    for (i, rec) in data.records.iter().enumerate() {
        let h_i = DVector::from_vec(ops.unstack(&h_star, i));
        let theta: Vec<f64> = (0..p).map(|l| base[l * n + i] + h_i[l]).collect();
        let (g, jac) = model
            .predict_with_jacobian(&theta, &rec.covariates)
            .map_err(|e| Error::Linearization { index: i, source: Box::new(e) })?;
        let yd = &rec.y - g + &jac * h_i;
        if yd.iter().any(|v| !v.is_finite()) {
            return Err(Error::Linearization { index: i, source: Box::new(Error::NonFinite(i)) });
        }
        ydagger.rows_mut(i * q, q).copy_from(&yd);
        jacobians.push(jac);
    }
    LinearizedProblem::new(jacobians, ydagger, ops, lambda)
}

impl<'a> LinearizedProblem<'a> {
    pub fn new(jacobians: Vec<DMatrix<f64>>, ydagger: DVector<f64>, ops: &'a MixedOperators, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Input(format!("lambda must be positive and finite, got {lambda}")));
        }
        if jacobians.len() != ops.n {
            return Err(Error::Input("one Jacobian per individual required".into()));
        }
        let q = jacobians.first().map_or(0, |j| j.nrows());
        if jacobians.iter().any(|j| j.nrows() != q || j.ncols() != ops.p()) || ydagger.len() != ops.n * q {
            return Err(Error::Input("Jacobian or pseudo-observation shapes are inconsistent".into()));
        }
        Ok(Self { jacobians, ydagger, ops, lambda })
    }

    /// The direct problem `G = id`: `L(x_i) = I_p` and the targets are the
    /// stacked parameter values (index `l * n + i`).
    pub fn direct(ops: &'a MixedOperators, targets: &DVector<f64>, lambda: f64) -> Result<Self> {
        let n = ops.n;
        let p = ops.p();
        if targets.len() != n * p {
            return Err(Error::Input("direct targets must have length n p".into()));
        }
        let mut yd = DVector::zeros(n * p);
        for i in 0..n {
            for l in 0..p {
                yd[i * p + l] = targets[l * n + i];
            }
        }
        Self::new(vec![DMatrix::identity(p, p); n], yd, ops, lambda)
    }

    pub fn n(&self) -> usize {
        self.ops.n
    }

    pub fn q(&self) -> usize {
        self.jacobians.first().map_or(0, |j| j.nrows())
    }

    /// Rows `l * n + i` (l = 0..p) of a stacked-by-component matrix.
    fn rows_of(&self, mat: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
        let n = self.n();
        let p = self.ops.p();
        DMatrix::from_fn(p, mat.ncols(), |l, c| mat[(l * n + i, c)])
    }

    /// `P^T LL^T LL M + n lambda I` and `P^T LL^T y_dag`, assembled one
    /// individual at a time.
    pub fn normal_system(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n();
        let q = self.q();
        let p = self.ops.p();
        let d = self.ops.d;
        let mut a = DMatrix::zeros(d, d);
        let mut b = DVector::zeros(d);
        for (i, l_i) in self.jacobians.iter().enumerate() {
            let m_i = self.rows_of(&self.ops.mmat, i);
            let c_i = l_i.tr_mul(l_i) * m_i;
            let e_i = l_i.tr_mul(&self.ydagger.rows(i * q, q));
            for l in 0..p {
                for &(col, v) in &self.ops.p_rows[l * n + i] {
                    for c in 0..d {
                        a[(col, c)] += v * c_i[(l, c)];
                    }
                    b[col] += v * e_i[l];
                }
            }
        }
        let reg = n as f64 * self.lambda;
        for k in 0..d {
            a[(k, k)] += reg;
        }
        (a, b)
    }

    /// Explicit nq×np operator `LL`.
    pub fn operator_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let q = self.q();
        let p = self.ops.p();
        let mut out = DMatrix::zeros(n * q, n * p);
        for (i, l_i) in self.jacobians.iter().enumerate() {
            for l in 0..p {
                for k in 0..q {
                    out[(i * q + k, l * n + i)] = l_i[(k, l)];
                }
            }
        }
        out
    }

    /// `LL M gamma - y_dag`.
    pub fn residual(&self, gamma: &DVector<f64>) -> DVector<f64> {
        let q = self.q();
        let theta = self.ops.apply_m(gamma);
        let mut r = -self.ydagger.clone();
        for (i, l_i) in self.jacobians.iter().enumerate() {
            let th = DVector::from_vec(self.ops.unstack(&theta, i));
            let mut seg = r.rows_mut(i * q, q);
            seg += l_i * th;
        }
        r
    }

    pub fn objective(&self, gamma: &DVector<f64>) -> f64 {
        self.residual(gamma).norm_squared() + self.n() as f64 * self.lambda * self.ops.norm_sq(gamma)
    }

    /// `2 M^T LL^T (LL M gamma - y_dag) + 2 n lambda D gamma`.
    pub fn gradient(&self, gamma: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let q = self.q();
        let p = self.ops.p();
        let r = self.residual(gamma);
        let mut g_theta = DVector::zeros(n * p);
        for (i, l_i) in self.jacobians.iter().enumerate() {
            let v = l_i.tr_mul(&r.rows(i * q, q));
            for l in 0..p {
                g_theta[l * n + i] = v[l];
            }
        }
        2.0 * self.ops.apply_mt(&g_theta) + 2.0 * n as f64 * self.lambda * self.ops.apply_d(gamma)
    }
}

/// Closed-form minimizer of the linearized objective.
pub fn solve_gamma(prob: &LinearizedProblem) -> Result<DVector<f64>> {
    let (a, b) = prob.normal_system();
    let lu = a.clone().lu();
    let singular = || {
        let u = lu.u();
        let diag = u.diagonal().map(f64::abs);
        let min = diag.min();
        Error::Singular { condition: if min > 0.0 { diag.max() / min } else { f64::INFINITY } }
    };
    let gamma = lu.solve(&b).ok_or_else(singular)?;
    if gamma.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    Ok(gamma)
}

pub fn solve_linear_tikhonov(prob: &LinearizedProblem) -> Result<RkhsCoefficients> {
    Ok(prob.ops.coefficients(solve_gamma(prob)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Record;
    use crate::kernels::{assemble_kernel_matrix, assemble_mixed_operators, KernelSpec, ScalarKernelSpec};
    use crate::model::{Covariates, LinearModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn covs(n: usize, rng: &mut ChaCha8Rng) -> Vec<Covariates> {
        (0..n).map(|_| Covariates::new(rng.random_range(0.0..20.0), 50.0)).collect()
    }

    fn random_problem<'a>(ops: &'a MixedOperators, q: usize, lambda: f64, rng: &mut ChaCha8Rng) -> LinearizedProblem<'a> {
        let p = ops.p();
        let jac = (0..ops.n).map(|_| DMatrix::from_fn(q, p, |_, _| rng.random_range(-1.0..1.0))).collect();
        let yd = DVector::from_fn(ops.n * q, |_, _| rng.random_range(-1.0..1.0));
        LinearizedProblem::new(jac, yd, ops, lambda).unwrap()
    }

    #[test]
    fn linear_model_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = covs(4, &mut rng);
        let spec = KernelSpec::nonparametric(2.0).unwrap();
        let ops = assemble_mixed_operators(&spec, &x).unwrap();
        let a = DMatrix::from_fn(3, 4, |r, c| (r + 2 * c) as f64 * 0.1 + 0.05);
        let model = LinearModel::new(a.clone());
        let recs = x
            .iter()
            .enumerate()
            .map(|(i, c)| Record { id: i, covariates: *c, y: DVector::from_fn(3, |k, _| (i + k) as f64) })
            .collect();
        let data = Dataset::from_records(recs);
        let prob = linearize(&model, &data, &ops, &DVector::zeros(16), &DVector::zeros(ops.d), 0.1).unwrap();
        for (i, r) in data.records.iter().enumerate() {
            assert_eq!(prob.jacobians[i], a);
            assert_eq!(prob.ydagger.rows(i * 3, 3).clone_owned(), r.y);
        }
    }

    #[test]
    fn normal_system_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = covs(5, &mut rng);
        let spec = KernelSpec::nonparametric(2.0).unwrap();
        let ops = assemble_mixed_operators(&spec, &x).unwrap();
        let prob = random_problem(&ops, 3, 0.05, &mut rng);
        let ll = prob.operator_dense();
        let dense_a = ops.pmat.transpose() * ll.transpose() * &ll * &ops.mmat
            + DMatrix::identity(ops.d, ops.d) * (5.0 * 0.05);
        let dense_b = ops.pmat.transpose() * ll.transpose() * &prob.ydagger;
        let (a, b) = prob.normal_system();
        assert!((a - dense_a).amax() < 1e-12);
        assert!((b - dense_b).amax() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = covs(7, &mut rng);
        let spec = KernelSpec::nonparametric(2.0).unwrap();
        let ops = assemble_mixed_operators(&spec, &x).unwrap();
        let prob = random_problem(&ops, 4, 0.01, &mut rng);
        let g = solve_gamma(&prob).unwrap();
        assert!(prob.gradient(&g).norm() <= 1e-8 * (1.0 + g.norm()));
        let q0 = prob.objective(&g);
        for _ in 0..20 {
            let delta = DVector::from_fn(ops.d, |_, _| rng.random_range(-1e-3..1e-3));
            assert!(prob.objective(&(&g + delta)) >= q0);
        }
    }

    #[test]
    fn direct_fully_dual_is_kernel_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = covs(6, &mut rng);
        let comps = vec![ScalarKernelSpec::gaussian(2.0), ScalarKernelSpec::Constant];
        let spec = KernelSpec::fully_dual(comps).unwrap();
        let ops = assemble_mixed_operators(&spec, &x).unwrap();
        let targets = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let lambda = 0.02;
        let prob = LinearizedProblem::direct(&ops, &targets, lambda).unwrap();
        let g = solve_gamma(&prob).unwrap();
        let k = assemble_kernel_matrix(&spec, &x).unwrap();
        let expect = (k + DMatrix::identity(12, 12) * (6.0 * lambda)).lu().solve(&targets).unwrap();
        assert!((g - expect).amax() < 1e-9);
    }

    #[test]
    fn huge_lambda_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = covs(5, &mut rng);
        let ops = assemble_mixed_operators(&KernelSpec::nonparametric(2.0).unwrap(), &x).unwrap();
        let prob = random_problem(&ops, 3, 1e9, &mut rng);
        let g = solve_gamma(&prob).unwrap();
        let (_, b) = prob.normal_system();
        assert!(g.norm() <= b.norm() / (5.0 * 1e9) * (1.0 + 1e-6));
        assert!(g.norm() < 1e-8);
    }

    #[test]
    fn norm_decreases_with_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = covs(6, &mut rng);
        let ops = assemble_mixed_operators(&KernelSpec::nonparametric(2.0).unwrap(), &x).unwrap();
        let base = random_problem(&ops, 3, 1.0, &mut rng);
        let mut last = f64::INFINITY;
        for lambda in [1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
            let prob = LinearizedProblem { lambda, ..base.clone() };
            let g = solve_gamma(&prob).unwrap();
            let nrm = ops.norm_sq(&g);
            assert!(nrm <= last * (1.0 + 1e-10));
            last = nrm;
        }
    }

    #[test]
    fn rejects_bad_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = covs(2, &mut rng);
        let ops = assemble_mixed_operators(&KernelSpec::nonparametric(2.0).unwrap(), &x).unwrap();
        assert!(LinearizedProblem::direct(&ops, &DVector::zeros(8), 0.0).is_err());
    }
}
