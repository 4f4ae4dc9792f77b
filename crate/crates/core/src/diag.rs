//! Finite-difference checks for analytic Jacobians.
//!
//! Every likelihood and dynamics map registered with a unit must agree with
//! a central finite difference of its own `predict`. The comparison uses a
//! mixed absolute/relative tolerance so that entries near zero are not held
//! to an impossible relative standard.

use nalgebra::{DMatrix, DVector};

/// Central finite-difference Jacobian of `f` at `x` with step `h`.
pub fn numeric_jacobian<F>(f: F, x: &DVector<f64>, out_dim: usize, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut jac = DMatrix::zeros(out_dim, x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Largest mixed-tolerance discrepancy between two matrices:
/// `|a - b| / max(1, |a|, |b|)` over all entries.
pub fn max_mixed_discrepancy(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "comparing matrices of different shape");
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let scale = 1.0f64.max(x.abs()).max(y.abs());
        worst = worst.max((x - y).abs() / scale);
    }
    worst
}

/// Check an analytic Jacobian against central differences. Returns the worst
/// mixed discrepancy; callers assert it against their tolerance (1e-6 for all
/// registered maps).
pub fn jacobian_discrepancy<F>(
    f: F,
    analytic: &DMatrix<f64>,
    x: &DVector<f64>,
    out_dim: usize,
) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let numeric = numeric_jacobian(f, x, out_dim, 1e-5);
    max_mixed_discrepancy(analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_jacobian_recovers_linear_map() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let f = {
            let m = m.clone();
            move |x: &DVector<f64>| &m * x
        };
        let x = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let jac = numeric_jacobian(&f, &x, 2, 1e-5);
        assert!(max_mixed_discrepancy(&jac, &m) < 1e-9);
    }

    #[test]
    fn discrepancy_detects_wrong_jacobian() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[0]]);
        let x = DVector::from_vec(vec![2.0]);
        let wrong = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(jacobian_discrepancy(f, &wrong, &x, 1) > 0.5);
    }
}
