//! BFGS with an inverse-Hessian update and backtracking line search
//! (sufficient decrease constant 1e-4, shrink factor 0.5).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{Objective, SolverOptions, SolverReport};

const ARMIJO: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

pub fn quasi_newton<O: Objective + ?Sized>(objective: &O, x0: &DVector<f64>, opts: &SolverOptions) -> SolverReport {
    let start = Instant::now();
    let n = x0.len();
    let mut evaluations = 1;
    let mut x = x0.clone();
    let Some((mut f, mut g)) = objective.value_and_gradient(&x) else {
        return SolverReport {
            x,
            objective: f64::INFINITY,
            iterations: 0,
            evaluations,
            converged: false,
            elapsed: start.elapsed(),
        };
    };
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        if g.norm() < opts.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h.fill_with_identity();
            scaled = false;
            dir = -g.clone();
            slope = -g.norm_squared();
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + alpha * &dir;
            evaluations += 1;
            let ft = objective.value(&trial);
            if ft.is_finite() && ft <= f + ARMIJO * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= SHRINK;
        }
        let Some((x_new, f_new)) = accepted else {
            if scaled || h != DMatrix::identity(n, n) {
                // stale curvature: retry from steepest descent once
                h.fill_with_identity();
                scaled = false;
                continue;
            }
            break;
        };
        evaluations += 1;
        let Some((_, g_new)) = objective.value_and_gradient(&x_new) else { break };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let small_step = s.norm() <= opts.step_tolerance * (1.0 + x.norm());
        let small_gain = (f - f_new).abs() <= 1e-15 * f.abs().max(1e-300);
        x = x_new;
        f = f_new;
        g = g_new;
        if small_step || small_gain {
            converged = g.norm() < opts.gradient_tolerance.sqrt();
            if converged || !scaled {
                break;
            }
            // a stalled step with a large gradient means stale curvature
            h.fill_with_identity();
            scaled = false;
            continue;
        }
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                h *= sy / y.norm_squared();
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H <- H - rho (s hy^T + hy s^T) + (rho^2 y^T H y + rho) s s^T
            h.ger(-rho, &s, &hy, 1.0);
            h.ger(-rho, &hy, &s, 1.0);
            h.ger(rho * rho * yhy + rho, &s, &s, 1.0);
        }
    }
    SolverReport { x, objective: f, iterations, evaluations, converged, elapsed: start.elapsed() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::FnObjective;

    #[test]
    fn convex_quadratic_minimized() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let exact = a.clone().lu().solve(&b).unwrap();
        let obj = FnObjective { value: |x: &DVector<f64>| 0.5 * x.dot(&(&a * x)) - b.dot(x), gradient: |x: &DVector<f64>| &a * x - &b };
        let rep = quasi_newton(&obj, &DVector::zeros(3), &SolverOptions::quasi_newton());
        assert!((rep.x - exact).amax() < 1e-8);
        assert!(rep.converged);
    }

    #[test]
    fn convergence_requires_a_small_gradient() {
        // eigenvalues 1e10 and 1: tiny steps alone must not count as convergence
        let obj = FnObjective {
            value: |x: &DVector<f64>| 1e10 * x[0] * x[0] + (x[1] - 1.0).powi(2),
            gradient: |x: &DVector<f64>| DVector::from_vec(vec![2e10 * x[0], 2.0 * (x[1] - 1.0)]),
        };
        let rep = quasi_newton(&obj, &DVector::from_vec(vec![1.0, 0.0]), &SolverOptions::quasi_newton());
        let (_, g) = obj.value_and_gradient(&rep.x).unwrap();
        assert!(!rep.converged || g.norm() < 1e-4, "converged with |g| = {}", g.norm());
    }

    #[test]
    fn stationary_start_returned() {
        let obj = FnObjective { value: |x: &DVector<f64>| (x[0] - 2.0).powi(2), gradient: |x: &DVector<f64>| DVector::from_vec(vec![2.0 * (x[0] - 2.0)]) };
        let x0 = DVector::from_vec(vec![2.0]);
        let rep = quasi_newton(&obj, &x0, &SolverOptions::quasi_newton());
        assert_eq!(rep.x, x0);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn objective_never_increases() {
        let obj = FnObjective {
            value: |x: &DVector<f64>| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            gradient: |x: &DVector<f64>| {
                DVector::from_vec(vec![
                    -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                    200.0 * (x[1] - x[0] * x[0]),
                ])
            },
        };
        let x0 = DVector::from_vec(vec![-1.2, 1.0]);
        let rep = quasi_newton(&obj, &x0, &SolverOptions::quasi_newton());
        assert!(rep.objective <= obj.value(&x0));
        assert!((rep.x - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-5);
    }
}
