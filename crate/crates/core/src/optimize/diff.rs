use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Central-difference gradient with component step
/// `relative_step * max(1, |x_j|)`.
pub fn finite_diff_gradient<F>(f: F, x: &DVector<f64>, relative_step: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    let mut work = x.clone();
    for j in 0..x.len() {
        let h = relative_step * x[j].abs().max(1.0);
        work[j] = x[j] + h;
        let up = f(&work);
        work[j] = x[j] - h;
        let down = f(&work);
        work[j] = x[j];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite(j));
        }
        g[j] = (up - down) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference Jacobian of a vector function.
pub fn finite_diff_jacobian<F>(f: F, x: &DVector<f64>, relative_step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut work = x.clone();
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let h = relative_step * x[j].abs().max(1.0);
        work[j] = x[j] + h;
        let up = f(&work);
        work[j] = x[j] - h;
        let down = f(&work);
        work[j] = x[j];
        match (up, down) {
            (Some(u), Some(d)) if u.iter().chain(d.iter()).all(|v| v.is_finite()) => {
                cols.push((u - d) / (2.0 * h));
            }
            _ => return Err(Error::NonFinite(j)),
        }
    }
    let m = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_columns(&cols).resize(m, x.len(), 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_gradient_exact() {
        let c = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let g = finite_diff_gradient(|v| c.dot(v), &DVector::zeros(3), 1e-6).unwrap();
        assert!((g - &c).amax() < 1e-10);
        // away from the origin the rounding error of f itself dominates
        let x = DVector::from_vec(vec![3.0, -100.0, 0.5]);
        let g = finite_diff_gradient(|v| c.dot(v), &x, 1e-6).unwrap();
        assert!((g - &c).amax() < 1e-8);
    }

    #[test]
    fn squared_norm_gradient() {
        let x = DVector::from_vec(vec![0.3, -4.0, 12.0]);
        let g = finite_diff_gradient(|v| v.norm_squared(), &x, 1e-6).unwrap();
        for j in 0..3 {
            assert!(((g[j] - 2.0 * x[j]) / (2.0 * x[j])).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_names_component() {
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let r = finite_diff_gradient(|v| if v[1] > 0.0 { f64::NAN } else { v[0] }, &x, 1e-6);
        assert!(matches!(r, Err(Error::NonFinite(1))));
    }
}
