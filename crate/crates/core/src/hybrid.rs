//! Categorical hidden causes over continuous trajectories. A hybrid head
//! keeps a bank of reduced trajectory models (one per intention), mixes them
//! into a top-down trajectory prior by Bayesian model average, accumulates
//! per-model log evidence while the continuous beliefs run, and turns the
//! accumulated evidence into a categorical posterior by Bayesian model
//! comparison at fixed window boundaries.

use nalgebra::{DMatrix, DVector};

use crate::intention::{mix_trajectories, Intention};
use crate::math::{ln_clamped, softmax, Precision};
use crate::unit::{ActionCoupling, Channel, ContinuousUnit, DynamicsTerm, IntentionMixture, PriorTerm, StepReport};
use crate::{Error, Result};

/// One reduced prior: an intention-shaped trajectory `f_m(x) = i_m(x) - x`
/// (never conditioned on the causes) with its own precision.
pub struct ReducedModel {
    pub intention: Intention,
    pub precision: Precision,
}

impl ReducedModel {
    pub fn trajectory(&self, x: &DVector<f64>) -> DVector<f64> {
        self.intention.attractor_error(x).expect("checked dims")
    }
}

/// Evidence-accumulation state machine attached to a continuous belief.
/// `causes` is the categorical posterior over reduced models, `prior_causes`
/// the categorical prior used at the next comparison (replaced every window
/// by a discrete planner when one is attached).
pub struct HybridHead {
    pub models: Vec<ReducedModel>,
    /// Full-model trajectory precision Pi_x.
    pub full_precision: Precision,
    /// Full-model posterior precision P_x, fixed configuration.
    pub posterior_precision: Precision,
    pub causes: DVector<f64>,
    pub prior_causes: DVector<f64>,
    pub accumulator: DVector<f64>,
    pub window: usize,
    pub steps_in_window: usize,
}

/// Posterior precision of the full model under the default convention:
/// the trajectory precision plus the Gauss-Newton curvature of every
/// observation channel at the initial state.
pub fn default_posterior_precision(
    pi_x: &Precision,
    channel_curvature: &[(DMatrix<f64>, Precision)],
) -> Result<Precision> {
    let mut p = pi_x.to_matrix();
    for (jac, pi_o) in channel_curvature {
        if jac.ncols() != p.ncols() {
            return Err(Error::dims("posterior curvature", jac.ncols(), p.ncols()));
        }
        p += jac.transpose() * pi_o.to_matrix() * jac;
    }
    Precision::from_full(p)
}

impl HybridHead {
    pub fn new(
        models: Vec<ReducedModel>,
        full_precision: Precision,
        posterior_precision: Precision,
        prior_causes: DVector<f64>,
        window: usize,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::config("hybrid head needs at least one reduced model"));
        }
        if prior_causes.len() != models.len() {
            return Err(Error::dims("prior causes vs models", prior_causes.len(), models.len()));
        }
        if window == 0 {
            return Err(Error::config("hybrid window must be positive"));
        }
        let m = models.len();
        Ok(HybridHead {
            models,
            full_precision,
            posterior_precision,
            causes: DVector::from_element(m, 1.0 / m as f64),
            prior_causes,
            accumulator: DVector::zeros(m),
            window,
            steps_in_window: 0,
        })
    }

    pub fn model_count(&self) -> usize {
        self.models.len()
    }

    /// Bayesian model average of the reduced trajectories under the current
    /// categorical causes: the full model's expected trajectory.
    pub fn bma_prior(&self, x: &DVector<f64>) -> DVector<f64> {
        let errors: Vec<DVector<f64>> = self.models.iter().map(|m| m.trajectory(x)).collect();
        mix_trajectories(&self.causes, &errors).expect("checked dims")
    }

    /// Reduced posterior moments of model `m` given the full posterior
    /// (mu_prime, P_x) and the full prior (eta_prime, Pi_x):
    /// `P_m = P_x + Pi_m - Pi_x`,
    /// `mu_m = P_m^-1 (P_x mu' + Pi_m f_m - Pi_x eta')`.
    pub fn reduced_posterior(
        &self,
        m: usize,
        x: &DVector<f64>,
        mu_prime: &DVector<f64>,
        eta_prime: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let model = &self.models[m];
        let p_m = self.posterior_precision.to_matrix() + model.precision.to_matrix()
            - self.full_precision.to_matrix();
        let chol = p_m
            .clone()
            .cholesky()
            .ok_or(Error::DegenerateReduction { index: m })?;
        let rhs = self.posterior_precision.apply(mu_prime)
            + model.precision.apply(&model.trajectory(x))
            - self.full_precision.apply(eta_prime);
        Ok((chol.solve(&rhs), p_m))
    }

    /// Instantaneous log-evidence rate of model `m`:
    /// `L_m = (mu_m' P_m mu_m - f_m' Pi_m f_m - mu' P_x mu' + eta' Pi_x eta') / 2`.
    pub fn evidence_rate(
        &self,
        m: usize,
        x: &DVector<f64>,
        mu_prime: &DVector<f64>,
        eta_prime: &DVector<f64>,
    ) -> Result<f64> {
        let (mu_m, p_m) = self.reduced_posterior(m, x, mu_prime, eta_prime)?;
        let f_m = self.models[m].trajectory(x);
        let quad = |v: &DVector<f64>, p: &DMatrix<f64>| (p * v).dot(v);
        Ok(0.5
            * (quad(&mu_m, &p_m) - self.models[m].precision.quad(&f_m)
                - self.posterior_precision.quad(mu_prime)
                + self.full_precision.quad(eta_prime)))
    }

    /// Riemann-sum step of the evidence integral, and one step of the
    /// window counter.
    pub fn accumulate_evidence(
        &mut self,
        x: &DVector<f64>,
        mu_prime: &DVector<f64>,
        dt: f64,
    ) -> Result<()> {
        let eta_prime = self.bma_prior(x);
        for m in 0..self.models.len() {
            let rate = self.evidence_rate(m, x, mu_prime, &eta_prime)?;
            self.accumulator[m] += dt * rate;
        }
        self.steps_in_window += 1;
        Ok(())
    }

    pub fn window_elapsed(&self) -> bool {
        self.steps_in_window >= self.window
    }

    /// Bayesian model comparison: categorical posterior from the prior and
    /// the accumulated evidence. Resets the accumulator and the window.
    pub fn bmc_update(&mut self) -> DVector<f64> {
        let mut logits = self.accumulator.clone();
        for (i, h) in self.prior_causes.iter().enumerate() {
            logits[i] += ln_clamped(*h);
        }
        self.causes = softmax(&logits);
        self.accumulator.fill(0.0);
        self.steps_in_window = 0;
        self.causes.clone()
    }

    /// Hand the accumulated evidence to an external comparator (a discrete
    /// planner) and reset the window without running the local comparison.
    pub fn take_evidence(&mut self) -> DVector<f64> {
        let l = self.accumulator.clone();
        self.accumulator.fill(0.0);
        self.steps_in_window = 0;
        l
    }

    /// Install externally computed causes (and the prior that produced them).
    pub fn set_causes(&mut self, causes: DVector<f64>, prior: DVector<f64>) {
        self.causes = causes;
        self.prior_causes = prior;
    }
}

/// A continuous unit whose trajectory prior is the model average of a hybrid
/// head and whose causes are the head's categorical posterior. The causes
/// are never gradient-updated; they change only at window boundaries.
pub struct HybridUnit {
    pub base: ContinuousUnit,
    pub head: HybridHead,
}

impl HybridUnit {
    /// Assemble the base unit so its dynamics term is the cause-weighted
    /// intention mixture over the head's models.
    pub fn new(
        x: crate::math::GeneralizedBelief,
        channels: Vec<Channel>,
        eta_x: Option<PriorTerm>,
        action: Option<ActionCoupling>,
        head: HybridHead,
    ) -> Result<Self> {
        let intentions: Vec<Intention> =
            head.models.iter().map(|m| m.intention.clone()).collect();
        let causes = head.causes.clone();
        let base = ContinuousUnit {
            x,
            v: causes,
            eta_x,
            eta_v: None,
            channels,
            dynamics: Some(DynamicsTerm {
                map: Box::new(IntentionMixture { intentions }),
                precision: head.full_precision.clone(),
            }),
            action,
        };
        Ok(HybridUnit { base, head })
    }

    /// Adopt the head's current causes as the mixture weights. Called after
    /// an external planner rewrites them at a window boundary.
    pub fn sync_causes(&mut self) {
        self.base.v = self.head.causes.clone();
    }

    /// One synchronous tick. Continuous beliefs follow the gradient flow
    /// with the mixture trajectory prior; evidence accumulates from the same
    /// pre-tick snapshot; at window boundaries the categorical causes are
    /// refreshed by model comparison (unless an external planner owns them,
    /// in which case the caller uses `head.take_evidence` instead).
    pub fn step(
        &mut self,
        obs: &[Option<DVector<f64>>],
        dt: f64,
        local_comparison: bool,
    ) -> Result<(Option<DVector<f64>>, StepReport)> {
        let errors = self.base.compute_errors(obs)?;
        let dx = self.base.update_hidden_states(&errors);
        let da = self.base.update_action(&errors, dt);
        self.head
            .accumulate_evidence(&self.base.x.mu, &self.base.x.mu_prime, dt)?;
        self.base.x.integrate(&dx, dt);
        if local_comparison && self.head.window_elapsed() {
            let v = self.head.bmc_update();
            self.base.v = v;
        }
        let report = self.base.report(&errors);
        if !self.base.x.is_finite() {
            return Err(Error::NonFinite { tick: 0, path: "hybrid unit belief".into() });
        }
        Ok((da, report))
    }
}
