//! The continuous active-inference unit: hidden-state and hidden-cause
//! beliefs, pluggable likelihood and dynamics maps, and action as
//! proprioceptive error suppression.
//!
//! A tick is synchronous: every error is computed from pre-tick beliefs,
//! then states, causes and action integrate simultaneously. The state
//! update follows
//!
//! `d[mu, mu'] = [mu' - Pi_eta e_eta + sum dg^T Pi_o e_o + df^T Pi_x e_x ; -Pi_x e_x]`
//!
//! action follows `da = -dg_p/da^T Pi_o e_op`, and Gaussian causes follow
//! `dv = -Pi_eta_v e_eta_v + dg/dv^T Pi_o e_ov + df/dv^T Pi_x e_x`.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::intention::Intention;
use crate::kinematics::{hand_jacobian, hand_jtv_jacobian, hand_position, ExtrinsicState};
use crate::math::{laplace_free_energy, GeneralizedBelief, Precision, PredictionError};
use crate::{Error, Result};

/// Observation model `o = g(x, v)`.
pub trait LikelihoodMap: Send + Sync {
    fn predict(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
    fn jacobian_x(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64>;
    fn jacobian_v(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64>;
    fn obs_dim(&self) -> usize;
}

/// Trajectory model `eta' = f(x, v)`.
pub trait DynamicsMap: Send + Sync {
    fn predict(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
    fn jacobian_x(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64>;
    fn jacobian_v(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64>;
}

fn selector_matrix(rows: &[usize], cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), cols);
    for (r, &c) in rows.iter().enumerate() {
        m[(r, c)] = 1.0;
    }
    m
}

/// Observe selected components of the hidden state directly.
pub struct SelectState {
    pub indices: Vec<usize>,
    pub state_dim: usize,
    pub cause_dim: usize,
}

impl LikelihoodMap for SelectState {
    fn predict(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| x[i]))
    }
    fn jacobian_x(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        selector_matrix(&self.indices, self.state_dim)
    }
    fn jacobian_v(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.indices.len(), self.cause_dim)
    }
    fn obs_dim(&self) -> usize {
        self.indices.len()
    }
}

/// Observe selected components of the hidden causes directly.
pub struct SelectCause {
    pub indices: Vec<usize>,
    pub state_dim: usize,
    pub cause_dim: usize,
}

impl LikelihoodMap for SelectCause {
    fn predict(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| v[i]))
    }
    fn jacobian_x(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.indices.len(), self.state_dim)
    }
    fn jacobian_v(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        selector_matrix(&self.indices, self.cause_dim)
    }
    fn obs_dim(&self) -> usize {
        self.indices.len()
    }
}

/// Visual likelihood of a flat arm model: the end-effector position computed
/// by forward kinematics over a block of joint angles.
pub struct HandFk {
    pub lengths: Vec<f64>,
    pub root: ExtrinsicState,
    /// First component of the joint-angle block inside the state vector.
    pub block_start: usize,
    pub state_dim: usize,
    pub cause_dim: usize,
}

impl HandFk {
    fn angles(&self, x: &DVector<f64>) -> DVector<f64> {
        x.rows(self.block_start, self.lengths.len()).into_owned()
    }
}

impl LikelihoodMap for HandFk {
    fn predict(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        let p = hand_position(&self.root, &self.lengths, &self.angles(x)).expect("checked dims");
        DVector::from_vec(vec![p.x, p.y])
    }
    fn jacobian_x(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        let j = hand_jacobian(&self.root, &self.lengths, &self.angles(x)).expect("checked dims");
        let mut out = DMatrix::zeros(2, self.state_dim);
        out.view_mut((0, self.block_start), (2, self.lengths.len())).copy_from(&j);
        out
    }
    fn jacobian_v(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, self.cause_dim)
    }
    fn obs_dim(&self) -> usize {
        2
    }
}

/// Duplicated-kinematics visual likelihood `g_v(x, v) = [T(x); v]`: the
/// observation stacks the predicted hand position and the target position
/// carried by the causes.
pub struct HandFkAndCause {
    pub lengths: Vec<f64>,
    pub root: ExtrinsicState,
}

impl LikelihoodMap for HandFkAndCause {
    fn predict(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let p = hand_position(&self.root, &self.lengths, x).expect("checked dims");
        let mut out = DVector::zeros(2 + v.len());
        out[0] = p.x;
        out[1] = p.y;
        out.rows_mut(2, v.len()).copy_from(v);
        out
    }
    fn jacobian_x(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let j = hand_jacobian(&self.root, &self.lengths, x).expect("checked dims");
        let mut out = DMatrix::zeros(2 + v.len(), x.len());
        out.view_mut((0, 0), (2, x.len())).copy_from(&j);
        out
    }
    fn jacobian_v(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(2 + v.len(), v.len());
        out.view_mut((2, 0), (v.len(), v.len()))
            .copy_from(&DMatrix::identity(v.len(), v.len()));
        let _ = x;
        out
    }
    fn obs_dim(&self) -> usize {
        2 + 2
    }
}

/// Fixed-point attractor `f(x) = rho - x`.
pub struct PointAttractor {
    pub rho: DVector<f64>,
    pub cause_dim: usize,
}

impl DynamicsMap for PointAttractor {
    fn predict(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        &self.rho - x
    }
    fn jacobian_x(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        -DMatrix::identity(x.len(), x.len())
    }
    fn jacobian_v(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), self.cause_dim)
    }
}

/// Cause-tracking attractor `f(x, v) = v - x`.
pub struct CauseAttractor;

impl DynamicsMap for CauseAttractor {
    fn predict(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        v - x
    }
    fn jacobian_x(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        -DMatrix::identity(x.len(), x.len())
    }
    fn jacobian_v(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len())
    }
}

/// Cause-weighted mixture of intention attractors:
/// `f(x, v) = sum_m v_m (i_m(x) - x)`.
pub struct IntentionMixture {
    pub intentions: Vec<Intention>,
}

impl IntentionMixture {
    pub fn attractor_errors(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        self.intentions
            .iter()
            .map(|i| i.attractor_error(x).expect("checked dims"))
            .collect()
    }
}

impl DynamicsMap for IntentionMixture {
    fn predict(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        crate::intention::mix_trajectories(v, &self.attractor_errors(x)).expect("checked dims")
    }
    fn jacobian_x(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let mut out = DMatrix::zeros(n, n);
        for (m, i) in self.intentions.iter().enumerate() {
            out += i.error_jacobian() * v[m];
        }
        out
    }
    fn jacobian_v(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        let errors = self.attractor_errors(x);
        let mut out = DMatrix::zeros(x.len(), errors.len());
        for (m, e) in errors.iter().enumerate() {
            out.set_column(m, e);
        }
        out
    }
}

/// Duplicated-kinematics dynamics `f(x, v) = k J(x)^T (v - T(x))`: the target
/// error is pulled back through the transposed hand Jacobian.
pub struct JacobianTransposeReach {
    pub lengths: Vec<f64>,
    pub root: ExtrinsicState,
    pub gain: f64,
}

impl DynamicsMap for JacobianTransposeReach {
    fn predict(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let t = hand_position(&self.root, &self.lengths, x).expect("checked dims");
        let j = hand_jacobian(&self.root, &self.lengths, x).expect("checked dims");
        let e = DVector::from_vec(vec![v[0] - t.x, v[1] - t.y]);
        j.transpose() * e * self.gain
    }
    fn jacobian_x(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let t = hand_position(&self.root, &self.lengths, x).expect("checked dims");
        let j = hand_jacobian(&self.root, &self.lengths, x).expect("checked dims");
        let w = Vector2::new(v[0] - t.x, v[1] - t.y);
        let h = hand_jtv_jacobian(&self.root, &self.lengths, x, &w).expect("checked dims");
        (h - j.transpose() * &j) * self.gain
    }
    fn jacobian_v(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        let j = hand_jacobian(&self.root, &self.lengths, x).expect("checked dims");
        j.transpose() * self.gain
    }
}

/// A prior with its precision.
pub struct PriorTerm {
    pub mean: DVector<f64>,
    pub precision: Precision,
}

/// One observation channel: a likelihood map and the precision of its error.
pub struct Channel {
    pub name: String,
    pub map: Box<dyn LikelihoodMap>,
    pub precision: Precision,
}

/// Dynamics model with the precision of the trajectory error.
pub struct DynamicsTerm {
    pub map: Box<dyn DynamicsMap>,
    pub precision: Precision,
}

/// Index of the proprioceptive channel whose error drives the action.
pub struct ActionCoupling {
    pub channel: usize,
}

pub struct ContinuousUnit {
    pub x: GeneralizedBelief,
    pub v: DVector<f64>,
    pub eta_x: Option<PriorTerm>,
    pub eta_v: Option<PriorTerm>,
    pub channels: Vec<Channel>,
    pub dynamics: Option<DynamicsTerm>,
    pub action: Option<ActionCoupling>,
}

/// Raw errors of one tick, all computed from pre-tick beliefs. A `None`
/// observation means the channel was absent this tick and contributes
/// nothing (zero precision).
pub struct UnitErrors {
    pub obs: Vec<Option<PredictionError>>,
    pub eta_x: Option<PredictionError>,
    pub eta_v: Option<PredictionError>,
    pub dynamics: Option<PredictionError>,
    pub eta_prime: Option<DVector<f64>>,
}

impl UnitErrors {
    pub fn all(&self) -> Vec<PredictionError> {
        let mut out: Vec<PredictionError> = self.obs.iter().flatten().cloned().collect();
        if let Some(e) = &self.eta_x {
            out.push(e.clone());
        }
        if let Some(e) = &self.eta_v {
            out.push(e.clone());
        }
        if let Some(e) = &self.dynamics {
            out.push(e.clone());
        }
        out
    }
}

/// Per-tick summary: free energy, one norm per error term, channels that
/// were missing their observation.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub free_energy: f64,
    pub error_norms: Vec<(String, f64)>,
    pub missing: Vec<String>,
}

impl ContinuousUnit {
    pub fn state_dim(&self) -> usize {
        self.x.dim()
    }

    pub fn cause_dim(&self) -> usize {
        self.v.len()
    }

    /// Prediction errors from current beliefs and the given observations
    /// (one slot per channel, `None` = channel silent this tick).
    pub fn compute_errors(&self, obs: &[Option<DVector<f64>>]) -> Result<UnitErrors> {
        if obs.len() != self.channels.len() {
            return Err(Error::dims("observations vs channels", obs.len(), self.channels.len()));
        }
        let mut obs_errors = Vec::with_capacity(obs.len());
        for (c, o) in self.channels.iter().zip(obs) {
            match o {
                None => obs_errors.push(None),
                Some(o) => {
                    let pred = c.map.predict(&self.x.mu, &self.v);
                    if pred.len() != o.len() {
                        return Err(Error::dims(format!("channel '{}'", c.name), pred.len(), o.len()));
                    }
                    obs_errors.push(Some(PredictionError::new(o - pred, c.precision.clone())?));
                }
            }
        }
        let eta_x = match &self.eta_x {
            Some(p) => Some(PredictionError::new(&self.x.mu - &p.mean, p.precision.clone())?),
            None => None,
        };
        let eta_v = match &self.eta_v {
            Some(p) => Some(PredictionError::new(&self.v - &p.mean, p.precision.clone())?),
            None => None,
        };
        let (dynamics, eta_prime) = match &self.dynamics {
            Some(d) => {
                let eta = d.map.predict(&self.x.mu, &self.v);
                (
                    Some(PredictionError::new(&self.x.mu_prime - &eta, d.precision.clone())?),
                    Some(eta),
                )
            }
            None => (None, None),
        };
        Ok(UnitErrors { obs: obs_errors, eta_x, eta_v, dynamics, eta_prime })
    }

    /// Gradient-flow derivative of the state belief.
    pub fn update_hidden_states(&self, errors: &UnitErrors) -> GeneralizedBelief {
        let n = self.state_dim();
        let mut d0 = self.x.mu_prime.clone();
        if let Some(e) = &errors.eta_x {
            d0 -= e.weighted();
        }
        for (c, oe) in self.channels.iter().zip(&errors.obs) {
            if let Some(oe) = oe {
                let jac = c.map.jacobian_x(&self.x.mu, &self.v);
                d0 += jac.transpose() * oe.weighted();
            }
        }
        let mut d1 = DVector::zeros(n);
        if let (Some(de), Some(dyn_term)) = (&errors.dynamics, &self.dynamics) {
            let w = de.weighted();
            d0 += dyn_term.map.jacobian_x(&self.x.mu, &self.v).transpose() * &w;
            d1 -= w;
        }
        GeneralizedBelief { mu: d0, mu_prime: d1 }
    }

    /// Gradient-flow derivative of Gaussian hidden causes.
    pub fn update_hidden_causes(&self, errors: &UnitErrors) -> DVector<f64> {
        let mut dv = DVector::zeros(self.cause_dim());
        if let Some(e) = &errors.eta_v {
            dv -= e.weighted();
        }
        for (c, oe) in self.channels.iter().zip(&errors.obs) {
            if let Some(oe) = oe {
                let jac = c.map.jacobian_v(&self.x.mu, &self.v);
                dv += jac.transpose() * oe.weighted();
            }
        }
        if let (Some(de), Some(dyn_term)) = (&errors.dynamics, &self.dynamics) {
            dv += dyn_term.map.jacobian_v(&self.x.mu, &self.v).transpose() * de.weighted();
        }
        dv
    }

    /// Action derivative from the proprioceptive error alone. Velocity
    /// control: the world integrates angles by `dt * a`, so the actuation
    /// Jacobian is the identity scaled by dt.
    pub fn update_action(&self, errors: &UnitErrors, dt: f64) -> Option<DVector<f64>> {
        let coupling = self.action.as_ref()?;
        let e = errors.obs.get(coupling.channel)?.as_ref()?;
        Some(-e.weighted() * dt)
    }

    /// One synchronous tick: errors from pre-tick beliefs, then states and
    /// causes integrate simultaneously. Returns the action derivative (if an
    /// action coupling exists) and the step report.
    pub fn step(
        &mut self,
        obs: &[Option<DVector<f64>>],
        dt: f64,
    ) -> Result<(Option<DVector<f64>>, StepReport)> {
        let errors = self.compute_errors(obs)?;
        let dx = self.update_hidden_states(&errors);
        let dv = self.update_hidden_causes(&errors);
        let da = self.update_action(&errors, dt);
        self.x.integrate(&dx, dt);
        self.v.axpy(dt, &dv, 1.0);
        let report = self.report(&errors);
        if !self.x.is_finite() || self.v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { tick: 0, path: "continuous unit belief".into() });
        }
        Ok((da, report))
    }

    pub fn report(&self, errors: &UnitErrors) -> StepReport {
        let mut norms = Vec::new();
        let mut missing = Vec::new();
        for (c, oe) in self.channels.iter().zip(&errors.obs) {
            match oe {
                Some(e) => norms.push((format!("o.{}", c.name), e.value.norm())),
                None => missing.push(c.name.clone()),
            }
        }
        if let Some(e) = &errors.eta_x {
            norms.push(("eta_x".into(), e.value.norm()));
        }
        if let Some(e) = &errors.eta_v {
            norms.push(("eta_v".into(), e.value.norm()));
        }
        if let Some(e) = &errors.dynamics {
            norms.push(("x".into(), e.value.norm()));
        }
        StepReport {
            free_energy: laplace_free_energy(&errors.all()),
            error_norms: norms,
            missing,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diag::jacobian_discrepancy;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn deg(d: f64) -> f64 {
        d * PI / 180.0
    }

    /// Single-joint reaching unit: identity proprioception, point attractor.
    fn reaching_unit(pi_o: f64, pi_x: f64) -> ContinuousUnit {
        ContinuousUnit {
            x: GeneralizedBelief::new(
                DVector::from_vec(vec![deg(-40.0)]),
                DVector::zeros(1),
            )
            .unwrap(),
            v: DVector::zeros(0),
            eta_x: None,
            eta_v: None,
            channels: vec![Channel {
                name: "proprio".into(),
                map: Box::new(SelectState { indices: vec![0], state_dim: 1, cause_dim: 0 }),
                precision: Precision::uniform(1, pi_o),
            }],
            dynamics: Some(DynamicsTerm {
                map: Box::new(PointAttractor { rho: DVector::from_vec(vec![deg(120.0)]), cause_dim: 0 }),
                precision: Precision::uniform(1, pi_x),
            }),
            action: Some(ActionCoupling { channel: 0 }),
        }
    }

    /// Tracking unit: proprioception on the state, vision on the cause,
    /// cause-attractor dynamics.
    fn tracking_unit(pi_o: f64, pi_v: f64, pi_x: f64) -> ContinuousUnit {
        ContinuousUnit {
            x: GeneralizedBelief::zeros(1),
            v: DVector::zeros(1),
            eta_x: None,
            eta_v: None,
            channels: vec![
                Channel {
                    name: "proprio".into(),
                    map: Box::new(SelectState { indices: vec![0], state_dim: 1, cause_dim: 1 }),
                    precision: Precision::uniform(1, pi_o),
                },
                Channel {
                    name: "vision".into(),
                    map: Box::new(SelectCause { indices: vec![0], state_dim: 1, cause_dim: 1 }),
                    precision: Precision::uniform(1, pi_v),
                },
            ],
            dynamics: Some(DynamicsTerm {
                map: Box::new(CauseAttractor),
                precision: Precision::uniform(1, pi_x),
            }),
            action: Some(ActionCoupling { channel: 0 }),
        }
    }

    #[test]
    fn errors_vanish_at_equilibrium() {
        let mut u = reaching_unit(10.0, 1.0);
        u.x.mu[0] = deg(120.0);
        u.x.mu_prime[0] = 0.0;
        let obs = vec![Some(DVector::from_vec(vec![deg(120.0)]))];
        let e = u.compute_errors(&obs).unwrap();
        for err in e.all() {
            assert!(err.value.amax() < 1e-12);
        }
    }

    #[test]
    fn reaching_initial_errors_match_paper_setup() {
        let u = reaching_unit(10.0, 1.0);
        let obs = vec![Some(DVector::from_vec(vec![deg(-40.0)]))];
        let e = u.compute_errors(&obs).unwrap();
        // observation matches belief: zero likelihood error
        assert!(e.obs[0].as_ref().unwrap().value.amax() < 1e-12);
        // dynamics error mu' - (rho - mu) = 0 - 160 deg
        assert_relative_eq!(e.dynamics.as_ref().unwrap().value[0], -deg(160.0), epsilon = 1e-12);
    }

    #[test]
    fn errors_match_naive_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let fact =
                crate::intention::EntityFactorization::new(&[("x0", 2), ("x1", 2)]).unwrap();
            let intentions = vec![
                Intention::stay("stay", 4),
                Intention::copy_block("reach", &fact, "x1", "x0").unwrap(),
            ];
            let u = ContinuousUnit {
                x: GeneralizedBelief::new(
                    DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)),
                    DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)),
                )
                .unwrap(),
                v: DVector::from_fn(2, |_, _| rng.gen_range(0.0..1.0)),
                eta_x: Some(PriorTerm {
                    mean: DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)),
                    precision: Precision::uniform(4, rng.gen_range(0.1..2.0)),
                }),
                eta_v: None,
                channels: vec![Channel {
                    name: "proprio".into(),
                    map: Box::new(SelectState { indices: vec![0, 1], state_dim: 4, cause_dim: 2 }),
                    precision: Precision::uniform(2, rng.gen_range(0.1..2.0)),
                }],
                dynamics: Some(DynamicsTerm {
                    map: Box::new(IntentionMixture { intentions: intentions.clone() }),
                    precision: Precision::uniform(4, rng.gen_range(0.1..2.0)),
                }),
                action: None,
            };
            let o = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let e = u.compute_errors(&[Some(o.clone())]).unwrap();

            // naive recomputation, scalar arithmetic only
            for i in 0..2 {
                let pred = u.x.mu[i];
                assert_relative_eq!(e.obs[0].as_ref().unwrap().value[i], o[i] - pred, epsilon = 1e-12);
            }
            let eta = &u.eta_x.as_ref().unwrap().mean;
            for i in 0..4 {
                assert_relative_eq!(e.eta_x.as_ref().unwrap().value[i], u.x.mu[i] - eta[i], epsilon = 1e-12);
            }
            // expected trajectory: v0 * 0 + v1 * (x1 - x0 on block 0)
            for i in 0..2 {
                let eta_p = u.v[1] * (u.x.mu[i + 2] - u.x.mu[i]);
                assert_relative_eq!(
                    e.dynamics.as_ref().unwrap().value[i],
                    u.x.mu_prime[i] - eta_p,
                    epsilon = 1e-12
                );
            }
            for i in 2..4 {
                assert_relative_eq!(
                    e.dynamics.as_ref().unwrap().value[i],
                    u.x.mu_prime[i],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn zero_errors_and_zero_velocity_is_fixed_point() {
        let mut u = reaching_unit(10.0, 1.0);
        u.x.mu[0] = deg(120.0);
        let obs = vec![Some(DVector::from_vec(vec![deg(120.0)]))];
        let e = u.compute_errors(&obs).unwrap();
        let dx = u.update_hidden_states(&e);
        assert!(dx.mu.amax() < 1e-12);
        assert!(dx.mu_prime.amax() < 1e-12);
    }

    #[test]
    fn state_update_matches_free_energy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let u = tracking_unit(
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
            );
            let mut u = u;
            u.x.mu[0] = rng.gen_range(-1.0..1.0);
            u.x.mu_prime[0] = rng.gen_range(-1.0..1.0);
            u.v[0] = rng.gen_range(-1.0..1.0);
            let obs = vec![
                Some(DVector::from_vec(vec![rng.gen_range(-1.0..1.0)])),
                Some(DVector::from_vec(vec![rng.gen_range(-1.0..1.0)])),
            ];
            let e = u.compute_errors(&obs).unwrap();
            let d = u.update_hidden_states(&e);

            // numeric -dF/dmu with everything else held fixed
            let f = |mu: f64| {
                let mut probe = ContinuousUnit {
                    x: GeneralizedBelief::new(
                        DVector::from_vec(vec![mu]),
                        u.x.mu_prime.clone(),
                    )
                    .unwrap(),
                    v: u.v.clone(),
                    eta_x: None,
                    eta_v: None,
                    channels: std::mem::take(&mut Vec::new()),
                    dynamics: None,
                    action: None,
                };
                // rebuild the same maps; trait objects are not clonable
                probe.channels = vec![
                    Channel {
                        name: "proprio".into(),
                        map: Box::new(SelectState { indices: vec![0], state_dim: 1, cause_dim: 1 }),
                        precision: u.channels[0].precision.clone(),
                    },
                    Channel {
                        name: "vision".into(),
                        map: Box::new(SelectCause { indices: vec![0], state_dim: 1, cause_dim: 1 }),
                        precision: u.channels[1].precision.clone(),
                    },
                ];
                probe.dynamics = Some(DynamicsTerm {
                    map: Box::new(CauseAttractor),
                    precision: u.dynamics.as_ref().unwrap().precision.clone(),
                });
                let e = probe.compute_errors(&obs).unwrap();
                laplace_free_energy(&e.all())
            };
            let h = 1e-6;
            let grad = (f(u.x.mu[0] + h) - f(u.x.mu[0] - h)) / (2.0 * h);
            assert_relative_eq!(d.mu[0], u.x.mu_prime[0] - grad, epsilon = 1e-5);

            // cause update equals -dF/dv
            let dv = u.update_hidden_causes(&e);
            let fv = |v: f64| {
                let mut probe = tracking_unit(1.0, 1.0, 1.0);
                probe.channels[0].precision = u.channels[0].precision.clone();
                probe.channels[1].precision = u.channels[1].precision.clone();
                probe.dynamics.as_mut().unwrap().precision =
                    u.dynamics.as_ref().unwrap().precision.clone();
                probe.x = u.x.clone();
                probe.v[0] = v;
                let e = probe.compute_errors(&obs).unwrap();
                laplace_free_energy(&e.all())
            };
            let gv = (fv(u.v[0] + h) - fv(u.v[0] - h)) / (2.0 * h);
            assert_relative_eq!(dv[0], -gv, epsilon = 1e-5);
        }
    }

    #[test]
    fn action_derivative_sign_and_zero() {
        let u = reaching_unit(10.0, 1.0);
        // observation equals prediction: no action pressure
        let e0 = u
            .compute_errors(&[Some(DVector::from_vec(vec![deg(-40.0)]))])
            .unwrap();
        assert!(u.update_action(&e0, 0.01).unwrap().amax() < 1e-12);
        // belief above observation (eps_o < 0): action pushes arm up toward belief
        let e1 = u
            .compute_errors(&[Some(DVector::from_vec(vec![deg(-50.0)]))])
            .unwrap();
        let da = u.update_action(&e1, 0.01).unwrap();
        assert!(da[0] > 0.0);
    }

    /// Closed loop on the single-joint reaching task: world angle integrates
    /// the action; both the real angle and the belief settle on the target.
    /// The action loop damps at rate ~ dt*Pi_o^2(2Pi_x-1)/(2Pi_x(1+Pi_o)^2),
    /// so dt and the precisions are chosen to finish well inside the run.
    #[test]
    fn closed_loop_reaching_converges() {
        let dt = 0.1;
        let mut u = reaching_unit(8.0, 1.5);
        let mut theta = 0.0f64;
        let mut a = 0.0f64;
        let mut f_init = None;
        let mut f_last = 0.0;
        for _ in 0..5000 {
            let obs = vec![Some(DVector::from_vec(vec![theta]))];
            let (da, rep) = u.step(&obs, dt).unwrap();
            f_init.get_or_insert(rep.free_energy);
            f_last = rep.free_energy;
            a += dt * da.unwrap()[0];
            theta += dt * a;
        }
        assert!((theta - deg(120.0)).abs() < deg(1.0), "theta = {theta}");
        assert!((u.x.mu[0] - deg(120.0)).abs() < deg(1.0), "mu = {}", u.x.mu[0]);
        assert!(f_last < 0.01 * f_init.unwrap(), "free energy {f_last} vs {}", f_init.unwrap());
    }

    /// Closed loop on the tracking task: target rotates at constant speed,
    /// cause belief locks on, first-order belief stabilizes near the speed.
    #[test]
    fn closed_loop_tracking_converges() {
        let dt = 0.1;
        let omega = 0.05; // rad per time unit
        let mut u = tracking_unit(8.0, 8.0, 1.5);
        u.v[0] = deg(60.0);
        let mut theta = 0.0f64;
        let mut a = 0.0f64;
        let steps = 6000;
        let mut worst_tail_err: f64 = 0.0;
        for t in 0..steps {
            let target = deg(60.0) + omega * (t as f64) * dt;
            let obs = vec![
                Some(DVector::from_vec(vec![theta])),
                Some(DVector::from_vec(vec![target])),
            ];
            let (da, _) = u.step(&obs, dt).unwrap();
            a += dt * da.unwrap()[0];
            theta += dt * a;
            if t > 3 * steps / 4 {
                worst_tail_err = worst_tail_err.max((u.x.mu[0] - theta).abs());
            }
        }
        assert!(worst_tail_err < deg(1.0), "tail belief error {worst_tail_err}");
        assert!(
            (u.x.mu_prime[0] - omega).abs() < 0.1 * omega,
            "mu' = {} vs omega = {omega}",
            u.x.mu_prime[0]
        );
    }

    #[test]
    fn step_at_equilibrium_leaves_unit_unchanged() {
        let mut u = reaching_unit(10.0, 1.0);
        u.x.mu[0] = deg(120.0);
        let before = u.x.clone();
        let obs = vec![Some(DVector::from_vec(vec![deg(120.0)]))];
        u.step(&obs, 0.01).unwrap();
        assert!((u.x.mu[0] - before.mu[0]).abs() < 1e-14);
        assert!((u.x.mu_prime[0] - before.mu_prime[0]).abs() < 1e-14);
    }

    #[test]
    fn report_norms_match_computed_errors() {
        let u = reaching_unit(10.0, 1.0);
        let obs = vec![Some(DVector::from_vec(vec![deg(-35.0)]))];
        let e = u.compute_errors(&obs).unwrap();
        let rep = u.report(&e);
        let by_name: std::collections::HashMap<_, _> =
            rep.error_norms.iter().cloned().collect();
        assert_relative_eq!(by_name["o.proprio"], e.obs[0].as_ref().unwrap().value.norm());
        assert_relative_eq!(by_name["x"], e.dynamics.as_ref().unwrap().value.norm());
        assert!(rep.missing.is_empty());
    }

    #[test]
    fn missing_channel_is_flagged_not_fatal() {
        let u = tracking_unit(1.0, 1.0, 1.0);
        let e = u
            .compute_errors(&[Some(DVector::from_vec(vec![0.1])), None])
            .unwrap();
        let rep = u.report(&e);
        assert_eq!(rep.missing, vec!["vision".to_string()]);
    }

    /// With action disabled and static observations the tick is a gradient
    /// flow plus the first-order shift; free energy must not increase beyond
    /// tolerance at small dt.
    #[test]
    fn perception_only_free_energy_descends() {
        let mut u = reaching_unit(8.0, 1.0);
        u.action = None;
        let obs = vec![Some(DVector::from_vec(vec![deg(-40.0)]))];
        let mut prev = f64::INFINITY;
        for _ in 0..20000 {
            let (_, rep) = u.step(&obs, 1e-3).unwrap();
            assert!(
                rep.free_energy <= prev + 1e-9,
                "free energy rose: {prev} -> {}",
                rep.free_energy
            );
            prev = rep.free_energy;
        }
    }

    /// With only the dynamics term active, the belief slides to the
    /// attractor with monotonically shrinking distance (overdamped regime).
    #[test]
    fn attractor_only_convergence_is_monotone() {
        let mut u = reaching_unit(0.0, 1.0);
        u.channels[0].precision = Precision::uniform(1, 0.0);
        u.action = None;
        let obs = vec![None];
        let mut prev = (u.x.mu[0] - deg(120.0)).abs();
        for _ in 0..200000 {
            u.step(&obs, 1e-3).unwrap();
            let d = (u.x.mu[0] - deg(120.0)).abs();
            assert!(d <= prev + 1e-12, "distance grew: {prev} -> {d}");
            prev = d;
        }
        assert!(prev < deg(0.5));
    }

    #[test]
    fn registered_maps_pass_finite_difference_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let lengths = vec![0.8, 0.6, 0.4, 0.3];
        let root = ExtrinsicState::origin();
        let fact = crate::intention::EntityFactorization::new(&[("x0", 4), ("x1", 4)]).unwrap();
        let mixture = IntentionMixture {
            intentions: vec![
                Intention::stay("stay", 8),
                Intention::copy_block("reach", &fact, "x1", "x0").unwrap(),
            ],
        };
        let fk = HandFk {
            lengths: lengths.clone(),
            root,
            block_start: 4,
            state_dim: 8,
            cause_dim: 2,
        };
        let dup_g = HandFkAndCause { lengths: lengths.clone(), root };
        let dup_f = JacobianTransposeReach { lengths: lengths.clone(), root, gain: 0.7 };

        for _ in 0..100 {
            let x8 = DVector::from_fn(8, |_, _| rng.gen_range(-PI..PI));
            let v2 = DVector::from_fn(2, |_, _| rng.gen_range(0.0..1.0));
            let x4 = DVector::from_fn(4, |_, _| rng.gen_range(-PI..PI));

            let d = jacobian_discrepancy(|x| fk.predict(x, &v2), &fk.jacobian_x(&x8, &v2), &x8, 2);
            assert!(d < 1e-6, "HandFk jac_x: {d}");

            let d = jacobian_discrepancy(
                |x| mixture.predict(x, &v2),
                &mixture.jacobian_x(&x8, &v2),
                &x8,
                8,
            );
            assert!(d < 1e-6, "IntentionMixture jac_x: {d}");
            let d = jacobian_discrepancy(
                |v| mixture.predict(&x8, v),
                &mixture.jacobian_v(&x8, &v2),
                &v2,
                8,
            );
            assert!(d < 1e-6, "IntentionMixture jac_v: {d}");

            let d = jacobian_discrepancy(
                |x| dup_g.predict(x, &v2),
                &dup_g.jacobian_x(&x4, &v2),
                &x4,
                4,
            );
            assert!(d < 1e-6, "HandFkAndCause jac_x: {d}");
            let d = jacobian_discrepancy(
                |v| dup_g.predict(&x4, v),
                &dup_g.jacobian_v(&x4, &v2),
                &v2,
                4,
            );
            assert!(d < 1e-6, "HandFkAndCause jac_v: {d}");

            let d = jacobian_discrepancy(
                |x| dup_f.predict(x, &v2),
                &dup_f.jacobian_x(&x4, &v2),
                &x4,
                4,
            );
            assert!(d < 1e-6, "JacobianTransposeReach jac_x: {d}");
            let d = jacobian_discrepancy(
                |v| dup_f.predict(&x4, v),
                &dup_f.jacobian_v(&x4, &v2),
                &v2,
                4,
            );
            assert!(d < 1e-6, "JacobianTransposeReach jac_v: {d}");
        }
    }
}
