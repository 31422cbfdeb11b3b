//! Levenberg–Marquardt with Marquardt diagonal scaling.
//!
//! Damping starts at `initial_damping`, is divided by 3 after an accepted
//! step and multiplied by 3 after a rejected one. A trial point with
//! invalid or non-finite residuals counts as a rejection.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{LeastSquares, SolverOptions, SolverReport};

const MAX_DAMPING: f64 = 1e20;

fn solve_damped(jtj: &DMatrix<f64>, g: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let mut a = jtj.clone();
    for k in 0..a.nrows() {
        let dk = jtj[(k, k)].max(1e-12 * (1.0 + jtj.diagonal().amax()));
        a[(k, k)] += mu * dk;
    }
    let rhs = -g;
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(&rhs));
    }
    a.lu().solve(&rhs)
}

pub fn levenberg_marquardt<P: LeastSquares + ?Sized>(
    problem: &P,
    tau0: &DVector<f64>,
    opts: &SolverOptions,
) -> SolverReport {
    let start = Instant::now();
    let mut evaluations = 1;
    let mut x = tau0.clone();
    let Some(mut r) = problem.residuals(&x) else {
        return SolverReport {
            x,
            objective: f64::INFINITY,
            iterations: 0,
            evaluations,
            converged: false,
            elapsed: start.elapsed(),
        };
    };
    let mut f = r.norm_squared();
    let mut mu = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        let Some(jac) = problem.jacobian(&x) else { break };
        let g = jac.tr_mul(&r);
        if g.amax() < opts.gradient_tolerance {
            converged = true;
            break;
        }
        let jtj = jac.tr_mul(&jac);
        loop {
            let Some(step) = solve_damped(&jtj, &g, mu) else {
                mu *= 3.0;
                if mu > MAX_DAMPING {
                    break 'outer;
                }
                continue;
            };
            let trial = &x + &step;
            evaluations += 1;
            match problem.residuals(&trial) {
                Some(rt) if rt.norm_squared() < f => {
                    let ft = rt.norm_squared();
                    let small_step = step.norm() <= opts.step_tolerance * (x.norm() + opts.step_tolerance);
                    let small_gain = (f - ft) <= 1e-15 * f;
                    x = trial;
                    r = rt;
                    f = ft;
                    mu = (mu / 3.0).max(1e-15);
                    if small_step || small_gain {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    mu *= 3.0;
                    if mu > MAX_DAMPING {
                        // no decrease possible along any damped direction
                        converged = g.amax() < opts.gradient_tolerance.sqrt();
                        break 'outer;
                    }
                }
            }
        }
    }
    SolverReport { x, objective: f, iterations, evaluations, converged, elapsed: start.elapsed() }
}
