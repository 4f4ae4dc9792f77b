//! Numerics shared by every unit: beliefs in generalized coordinates,
//! precision-weighted errors, the Laplace free energy and explicit Euler
//! integration.
//!
//! Beliefs carry two temporal orders only: a value `mu` and its expected
//! rate of change `mu_prime`. The shift operator maps `[mu, mu']` to
//! `[mu', 0]`, i.e. it promotes the first order and truncates above it.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Probabilities below this floor are clamped before taking logs.
pub const LN_FLOOR: f64 = 1e-10;

/// Natural log with the probability floor applied. `ln_clamped(0) == ln(1e-10)`.
pub fn ln_clamped(p: f64) -> f64 {
    p.max(LN_FLOOR).ln()
}

/// Softmax over a vector of log-scores. Shift-invariant and safe against
/// overflow; the output sums to one exactly up to rounding.
pub fn softmax(scores: &DVector<f64>) -> DVector<f64> {
    let hi = scores.max();
    let exps = scores.map(|s| (s - hi).exp());
    let z: f64 = exps.sum();
    exps / z
}

/// Belief over a hidden variable in generalized coordinates of motion,
/// truncated at the first order.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedBelief {
    pub mu: DVector<f64>,
    pub mu_prime: DVector<f64>,
}

impl GeneralizedBelief {
    pub fn new(mu: DVector<f64>, mu_prime: DVector<f64>) -> Result<Self> {
        if mu.len() != mu_prime.len() {
            return Err(Error::dims("GeneralizedBelief orders", mu.len(), mu_prime.len()));
        }
        Ok(Self { mu, mu_prime })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mu: DVector::zeros(dim),
            mu_prime: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().all(|x| x.is_finite()) && self.mu_prime.iter().all(|x| x.is_finite())
    }

    /// Shift operator: `[mu, mu'] -> [mu', 0]`. Applying it twice yields zero.
    pub fn shift(&self) -> Self {
        Self {
            mu: self.mu_prime.clone(),
            mu_prime: DVector::zeros(self.mu_prime.len()),
        }
    }

    /// Euler step over both orders simultaneously.
    pub fn integrate(&mut self, derivative: &GeneralizedBelief, dt: f64) {
        self.mu.axpy(dt, &derivative.mu, 1.0);
        self.mu_prime.axpy(dt, &derivative.mu_prime, 1.0);
    }
}

/// Precision (inverse covariance). Diagonal storage is the default; the full
/// form exists for posterior precisions produced by model reduction.
#[derive(Debug, Clone, PartialEq)]
pub enum Precision {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Precision {
    /// Isotropic diagonal precision.
    pub fn uniform(dim: usize, weight: f64) -> Self {
        Precision::Diagonal(DVector::from_element(dim, weight))
    }

    pub fn from_diagonal(entries: DVector<f64>) -> Result<Self> {
        if entries.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::config("diagonal precision entries must be finite and >= 0"));
        }
        Ok(Precision::Diagonal(entries))
    }

    /// Full symmetric positive semi-definite precision. Symmetry is checked
    /// entrywise; definiteness via the symmetric eigendecomposition.
    pub fn from_full(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::dims("precision matrix", matrix.nrows(), matrix.ncols()));
        }
        let scale = matrix.amax().max(1.0);
        for i in 0..matrix.nrows() {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::config("precision matrix must be symmetric"));
                }
            }
        }
        let eig = matrix.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -1e-9 * scale) {
            return Err(Error::config("precision matrix must be positive semi-definite"));
        }
        Ok(Precision::Full(matrix))
    }

    pub fn dim(&self) -> usize {
        match self {
            Precision::Diagonal(d) => d.len(),
            Precision::Full(m) => m.nrows(),
        }
    }

    /// `Pi * e`.
    pub fn apply(&self, e: &DVector<f64>) -> DVector<f64> {
        match self {
            Precision::Diagonal(d) => d.component_mul(e),
            Precision::Full(m) => m * e,
        }
    }

    /// Quadratic form `e^T Pi e`.
    pub fn quad(&self, e: &DVector<f64>) -> f64 {
        e.dot(&self.apply(e))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Precision::Diagonal(d) => DMatrix::from_diagonal(d),
            Precision::Full(m) => m.clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Precision::Diagonal(d) => d.iter().all(|&w| w == 0.0),
            Precision::Full(m) => m.iter().all(|&w| w == 0.0),
        }
    }
}

/// A raw error paired with the precision that weights it.
#[derive(Debug, Clone)]
pub struct PredictionError {
    pub value: DVector<f64>,
    pub precision: Precision,
}

impl PredictionError {
    pub fn new(value: DVector<f64>, precision: Precision) -> Result<Self> {
        if value.len() != precision.dim() {
            return Err(Error::dims("prediction error", value.len(), precision.dim()));
        }
        Ok(Self { value, precision })
    }

    pub fn weighted(&self) -> DVector<f64> {
        self.precision.apply(&self.value)
    }

    pub fn energy(&self) -> f64 {
        0.5 * self.precision.quad(&self.value)
    }
}

/// `Pi * e` with a dimension check.
pub fn weighted_error(error: &DVector<f64>, precision: &Precision) -> Result<DVector<f64>> {
    if error.len() != precision.dim() {
        return Err(Error::dims("weighted_error", error.len(), precision.dim()));
    }
    Ok(precision.apply(error))
}

/// Free energy under the Laplace approximation with constants dropped:
/// the sum of `1/2 e^T Pi e` over all error terms. Non-negative, and zero
/// exactly when every error weighted by a definite precision vanishes.
pub fn laplace_free_energy(errors: &[PredictionError]) -> f64 {
    errors.iter().map(PredictionError::energy).sum()
}

/// Explicit Euler step: `x + dt * dx`.
pub fn euler_step(x: &DVector<f64>, dx: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    if x.len() != dx.len() {
        return Err(Error::dims("euler_step", x.len(), dx.len()));
    }
    Ok(x + dx * dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weighted_error_diagonal_scales_componentwise() {
        let pi = Precision::Diagonal(DVector::from_vec(vec![1.0, 2.0]));
        let e = DVector::from_vec(vec![3.0, 4.0]);
        let w = weighted_error(&e, &pi).unwrap();
        assert_eq!(w, DVector::from_vec(vec![3.0, 8.0]));
    }

    #[test]
    fn weighted_error_of_zero_is_zero() {
        let pi = Precision::uniform(3, 7.5);
        let w = weighted_error(&DVector::zeros(3), &pi).unwrap();
        assert!(w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn weighted_error_rejects_dimension_mismatch() {
        let pi = Precision::uniform(2, 1.0);
        let e = DVector::zeros(3);
        assert!(weighted_error(&e, &pi).is_err());
    }

    #[test]
    fn free_energy_single_term() {
        let err = PredictionError::new(
            DVector::from_vec(vec![2.0]),
            Precision::uniform(1, 3.0),
        )
        .unwrap();
        assert_relative_eq!(laplace_free_energy(&[err]), 6.0);
    }

    #[test]
    fn free_energy_empty_is_zero() {
        assert_eq!(laplace_free_energy(&[]), 0.0);
    }

    #[test]
    fn free_energy_adds_over_terms() {
        let a = PredictionError::new(DVector::from_vec(vec![1.0, 1.0]), Precision::uniform(2, 2.0))
            .unwrap();
        let b = PredictionError::new(DVector::from_vec(vec![3.0]), Precision::uniform(1, 1.0))
            .unwrap();
        let fa = laplace_free_energy(&[a.clone()]);
        let fb = laplace_free_energy(&[b.clone()]);
        assert_relative_eq!(laplace_free_energy(&[a, b]), fa + fb);
    }

    #[test]
    fn shift_promotes_first_order_and_truncates() {
        let b = GeneralizedBelief::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, 4.0]),
        )
        .unwrap();
        let s = b.shift();
        assert_eq!(s.mu, DVector::from_vec(vec![3.0, 4.0]));
        assert_eq!(s.mu_prime, DVector::zeros(2));
        let ss = s.shift();
        assert_eq!(ss.mu, DVector::zeros(2));
        assert_eq!(ss.mu_prime, DVector::zeros(2));
    }

    #[test]
    fn euler_step_matches_hand_computation() {
        let x = DVector::from_vec(vec![1.0, -1.0]);
        let dx = DVector::from_vec(vec![10.0, 4.0]);
        let y = euler_step(&x, &dx, 0.1).unwrap();
        assert_relative_eq!(y[0], 2.0);
        assert_relative_eq!(y[1], -0.6);
    }

    #[test]
    fn euler_step_zero_dt_is_identity() {
        let x = DVector::from_vec(vec![5.0, 6.0]);
        let dx = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(euler_step(&x, &dx, 0.0).unwrap(), x);
    }

    // Gradient descent on random positive-definite quadratics decreases the
    // objective monotonically when dt stays below 1/lambda_max.
    #[test]
    fn euler_descent_on_random_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let dim = rng.gen_range(2..6);
            let m = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
            let a = &m * m.transpose() + DMatrix::identity(dim, dim) * 0.1;
            let lam_max = a.clone().symmetric_eigen().eigenvalues.max();
            let dt = 0.9 / lam_max;
            let mut x = DVector::from_fn(dim, |_, _| rng.gen_range(-3.0..3.0));
            let f = |x: &DVector<f64>| 0.5 * x.dot(&(&a * x));
            let mut prev = f(&x);
            for _ in 0..100 {
                let grad = &a * &x;
                x = euler_step(&x, &(-grad), dt).unwrap();
                let cur = f(&x);
                assert!(cur <= prev + 1e-12, "objective increased: {prev} -> {cur}");
                prev = cur;
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let s = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let p = softmax(&s);
        let q = softmax(&s.add_scalar(55.0));
        assert_relative_eq!(p.sum(), 1.0, epsilon = 1e-12);
        assert_relative_eq!((p - q).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ln_clamped_floors_at_configured_probability() {
        assert_relative_eq!(ln_clamped(0.0), LN_FLOOR.ln());
        assert_relative_eq!(ln_clamped(0.5), 0.5f64.ln());
    }

    #[test]
    fn full_precision_rejects_asymmetry_and_indefiniteness() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(Precision::from_full(asym).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(Precision::from_full(indef).is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(Precision::from_full(ok).is_ok());
    }

    proptest! {
        #[test]
        fn free_energy_is_nonnegative(values in proptest::collection::vec(-100.0f64..100.0, 1..6),
                                      weights in proptest::collection::vec(0.0f64..50.0, 1..6)) {
            let n = values.len().min(weights.len());
            let err = PredictionError::new(
                DVector::from_vec(values[..n].to_vec()),
                Precision::Diagonal(DVector::from_vec(weights[..n].to_vec())),
            ).unwrap();
            prop_assert!(laplace_free_energy(&[err]) >= 0.0);
        }

        #[test]
        fn weighted_error_is_linear(e1 in proptest::collection::vec(-10.0f64..10.0, 3),
                                    e2 in proptest::collection::vec(-10.0f64..10.0, 3),
                                    a in -5.0f64..5.0) {
            let pi = Precision::Diagonal(DVector::from_vec(vec![0.5, 2.0, 3.0]));
            let v1 = DVector::from_vec(e1);
            let v2 = DVector::from_vec(e2);
            let lhs = weighted_error(&(&v1 * a + &v2), &pi).unwrap();
            let rhs = weighted_error(&v1, &pi).unwrap() * a + weighted_error(&v2, &pi).unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-9);
        }
    }
}
