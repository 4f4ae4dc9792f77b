//! Discrete planner: a categorical POMDP whose outcomes are the categorical
//! causes of attached hybrid heads. State posteriors are computed per policy
//! by exact forward-backward smoothing over the action-conditioned chain;
//! policies are scored by expected free energy; the planner emits fresh
//! cause priors for every head at each window boundary and keeps a sliding
//! observation window so runs longer than the horizon stay plannable.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::math::{ln_clamped, softmax};
use crate::{Error, Result};

fn check_stochastic(m: &DMatrix<f64>, what: &str) -> Result<()> {
    for c in 0..m.ncols() {
        let col = m.column(c);
        if col.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::config(format!("{what}: column {c} has invalid entries")));
        }
        let s: f64 = col.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("{what}: column {c} sums to {s}")));
        }
    }
    Ok(())
}

fn normalize(mut v: DVector<f64>) -> Result<DVector<f64>> {
    let s = v.sum();
    if !s.is_finite() || s <= 0.0 {
        return Err(Error::config("belief mass collapsed to zero"));
    }
    v /= s;
    Ok(v)
}

fn log_sum_exp(v: &DVector<f64>) -> f64 {
    let m = v.max();
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Categorical generative model: per-head likelihoods `a`, per-action
/// transitions `b`, log preferences over causes `c` (per head, per step),
/// initial prior `d`, and the exhaustive policy list over `horizon - 1`
/// transitions.
pub struct DiscreteModel {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub c: Vec<Vec<DVector<f64>>>,
    pub d: DVector<f64>,
    pub horizon: usize,
    pub policies: Vec<Vec<usize>>,
    /// When set, policy scores include the evidence-fit term as well as the
    /// expected free energy.
    pub policy_score_includes_fit: bool,
}

/// Per-policy state chains plus the policy posterior and both scores.
#[derive(Debug, Clone)]
pub struct PolicyBeliefs {
    pub states: Vec<Vec<DVector<f64>>>,
    pub pi: DVector<f64>,
    pub g: DVector<f64>,
    pub f: DVector<f64>,
}

impl DiscreteModel {
    /// `c_raw` carries one preference vector per head (broadcast across
    /// steps) or one per step; preferences are normalized here to
    /// log-probabilities.
    pub fn new(
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        c_raw: Vec<Vec<DVector<f64>>>,
        d: DVector<f64>,
        horizon: usize,
    ) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::config("discrete model needs at least one likelihood"));
        }
        if b.is_empty() {
            return Err(Error::config("discrete model needs at least one action"));
        }
        if horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        let n = d.len();
        for (i, m) in a.iter().enumerate() {
            if m.ncols() != n {
                return Err(Error::dims(format!("likelihood {i} columns"), m.ncols(), n));
            }
            check_stochastic(m, &format!("likelihood {i}"))?;
        }
        for (i, m) in b.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::dims(format!("transition {i}"), m.nrows(), n));
            }
            check_stochastic(m, &format!("transition {i}"))?;
        }
        let dsum: f64 = d.iter().sum();
        if d.iter().any(|&x| x < 0.0) || (dsum - 1.0).abs() > 1e-12 {
            return Err(Error::config("initial prior is not on the simplex"));
        }
        if c_raw.len() != a.len() {
            return Err(Error::dims("preferences vs likelihoods", c_raw.len(), a.len()));
        }
        let mut c = Vec::with_capacity(c_raw.len());
        for (i, per_head) in c_raw.into_iter().enumerate() {
            if per_head.len() != 1 && per_head.len() != horizon {
                return Err(Error::config(format!(
                    "preferences for head {i} must have 1 or {horizon} step vectors"
                )));
            }
            let mut per_step = Vec::with_capacity(horizon);
            for t in 0..horizon {
                let raw = if per_head.len() == 1 { &per_head[0] } else { &per_head[t] };
                if raw.len() != a[i].nrows() {
                    return Err(Error::dims(
                        format!("preference vector for head {i}"),
                        raw.len(),
                        a[i].nrows(),
                    ));
                }
                let z = log_sum_exp(raw);
                per_step.push(raw.map(|x| x - z));
            }
            c.push(per_step);
        }
        let policies = enumerate_policies(b.len(), horizon.saturating_sub(1));
        Ok(DiscreteModel { a, b, c, d, horizon, policies, policy_score_includes_fit: false })
    }

    pub fn state_count(&self) -> usize {
        self.d.len()
    }

    pub fn head_count(&self) -> usize {
        self.a.len()
    }

    /// Log-likelihood of one step's observed cause vectors, per state:
    /// soft evidence enters as the expectation of each likelihood's logs.
    fn emission_log(&self, observed: &[DVector<f64>]) -> DVector<f64> {
        let n = self.state_count();
        let mut out = DVector::zeros(n);
        for (i, o) in observed.iter().enumerate() {
            for s in 0..n {
                let mut acc = 0.0;
                for j in 0..o.len() {
                    acc += o[j] * ln_clamped(self.a[i][(j, s)]);
                }
                out[s] += acc;
            }
        }
        out
    }

    /// Exact smoothing marginals of one policy's chain given the observed
    /// cause vectors for the leading steps (later steps carry no evidence).
    /// `anchor` replaces the initial prior when the window has slid.
    pub fn infer_states(
        &self,
        policy: &[usize],
        observed: &[Vec<DVector<f64>>],
        anchor: &DVector<f64>,
    ) -> Result<Vec<DVector<f64>>> {
        let t_total = self.horizon;
        if policy.len() + 1 != t_total {
            return Err(Error::dims("policy length vs horizon", policy.len() + 1, t_total));
        }
        if observed.len() > t_total {
            return Err(Error::dims("observations vs horizon", observed.len(), t_total));
        }
        let mut phi = Vec::with_capacity(t_total);
        for t in 0..t_total {
            if t < observed.len() {
                let lg = self.emission_log(&observed[t]);
                let m = lg.max();
                phi.push(lg.map(|x| (x - m).exp()));
            } else {
                phi.push(DVector::from_element(self.state_count(), 1.0));
            }
        }
        let mut alpha = Vec::with_capacity(t_total);
        alpha.push(normalize(anchor.component_mul(&phi[0]))?);
        for t in 1..t_total {
            let pred = &self.b[policy[t - 1]] * &alpha[t - 1];
            alpha.push(normalize(pred.component_mul(&phi[t]))?);
        }
        let mut beta = vec![DVector::from_element(self.state_count(), 1.0); t_total];
        for t in (0..t_total - 1).rev() {
            let msg = self.b[policy[t]].transpose() * phi[t + 1].component_mul(&beta[t + 1]);
            beta[t] = normalize(msg)?;
        }
        let mut out = Vec::with_capacity(t_total);
        for t in 0..t_total {
            out.push(normalize(alpha[t].component_mul(&beta[t]))?);
        }
        Ok(out)
    }

    /// Evidence-fit score of one policy's beliefs: self-information of the
    /// state chain minus its fit to prior, transitions, and observed causes.
    pub fn variational_free_energy(
        &self,
        policy: &[usize],
        states: &[DVector<f64>],
        observed: &[Vec<DVector<f64>>],
        anchor: &DVector<f64>,
    ) -> f64 {
        let n = self.state_count();
        let mut f = 0.0;
        for s in states {
            for k in 0..n {
                if s[k] > 0.0 {
                    f += s[k] * s[k].ln();
                }
            }
        }
        for (t, obs) in observed.iter().enumerate() {
            for (i, o) in obs.iter().enumerate() {
                for j in 0..o.len() {
                    for k in 0..n {
                        f -= o[j] * ln_clamped(self.a[i][(j, k)]) * states[t][k];
                    }
                }
            }
        }
        for k in 0..n {
            f -= states[0][k] * ln_clamped(anchor[k]);
        }
        for t in 1..states.len() {
            let b = &self.b[policy[t - 1]];
            for k in 0..n {
                for k2 in 0..n {
                    f -= states[t][k] * ln_clamped(b[(k, k2)]) * states[t - 1][k2];
                }
            }
        }
        f
    }

    /// Column entropies of head `i`'s likelihood.
    fn ambiguity_vector(&self, i: usize) -> DVector<f64> {
        let a = &self.a[i];
        DVector::from_fn(a.ncols(), |s, _| {
            -(0..a.nrows()).map(|j| a[(j, s)] * ln_clamped(a[(j, s)])).sum::<f64>()
        })
    }

    /// Expected free energy of one policy from step `from` (0-based) on:
    /// risk of the predicted causes relative to preferences, plus expected
    /// likelihood ambiguity, summed over heads.
    pub fn expected_free_energy(&self, states: &[DVector<f64>], from: usize) -> f64 {
        let (kl, amb) = self.efe_decomposition(states, from);
        kl + amb
    }

    pub fn efe_decomposition(&self, states: &[DVector<f64>], from: usize) -> (f64, f64) {
        let mut kl = 0.0;
        let mut amb = 0.0;
        for i in 0..self.head_count() {
            let h = self.ambiguity_vector(i);
            for t in from..states.len() {
                let v = &self.a[i] * &states[t];
                for j in 0..v.len() {
                    if v[j] > 0.0 {
                        kl += v[j] * (v[j].ln() - self.c[i][t][j]);
                    }
                }
                amb += states[t].dot(&h);
            }
        }
        (kl, amb)
    }

    /// Policy posterior from the scores.
    pub fn infer_policies(&self, g: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        let logits = if self.policy_score_includes_fit { -(g + f) } else { -g };
        softmax(&logits)
    }
}

fn enumerate_policies(actions: usize, transitions: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..transitions {
        let mut next = Vec::with_capacity(out.len() * actions);
        for p in &out {
            for a in 0..actions {
                let mut q = p.clone();
                q.push(a);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Cause messages emitted at a window boundary for one hybrid head.
#[derive(Debug, Clone)]
pub struct CausePackage {
    /// Posterior causes to install for the upcoming window.
    pub causes: DVector<f64>,
    /// Categorical prior (predicted causes) to install as the head's prior.
    pub prior: DVector<f64>,
    /// Posterior over the window that just closed (prior then + evidence).
    pub outcome: DVector<f64>,
}

/// Receding-horizon orchestration over the discrete model. Observed windows
/// accumulate up to `horizon - 1`; after that the oldest observation is
/// dropped and the initial prior is re-anchored on the smoothed second-step
/// marginal, so at least one unobserved planning step always remains.
pub struct Planner {
    pub model: DiscreteModel,
    pub beliefs: PolicyBeliefs,
    history: VecDeque<Vec<DVector<f64>>>,
    anchor: DVector<f64>,
    pending_prior: Vec<DVector<f64>>,
}

impl Planner {
    pub fn new(model: DiscreteModel) -> Result<Self> {
        if model.horizon < 2 {
            return Err(Error::config("planner needs a horizon of at least 2"));
        }
        let anchor = model.d.clone();
        let beliefs = Self::infer_all(&model, &[], &anchor)?;
        let s0 = Self::policy_marginal(&model, &beliefs, 0);
        let pending_prior: Vec<DVector<f64>> =
            model.a.iter().map(|a| a * &s0).collect();
        Ok(Planner { model, beliefs, history: VecDeque::new(), anchor, pending_prior })
    }

    fn infer_all(
        model: &DiscreteModel,
        history: &[Vec<DVector<f64>>],
        anchor: &DVector<f64>,
    ) -> Result<PolicyBeliefs> {
        let np = model.policies.len();
        let mut states = Vec::with_capacity(np);
        let mut g = DVector::zeros(np);
        let mut f = DVector::zeros(np);
        for (p, policy) in model.policies.iter().enumerate() {
            let chain = model.infer_states(policy, history, anchor)?;
            g[p] = model.expected_free_energy(&chain, history.len());
            f[p] = model.variational_free_energy(policy, &chain, history, anchor);
            states.push(chain);
        }
        let pi = model.infer_policies(&g, &f);
        Ok(PolicyBeliefs { states, pi, g, f })
    }

    fn policy_marginal(model: &DiscreteModel, beliefs: &PolicyBeliefs, slot: usize) -> DVector<f64> {
        let mut s = DVector::zeros(model.state_count());
        for (p, chain) in beliefs.states.iter().enumerate() {
            s.axpy(beliefs.pi[p], &chain[slot], 1.0);
        }
        s
    }

    /// Policy-averaged state marginal at window slot `slot`.
    pub fn marginal(&self, slot: usize) -> DVector<f64> {
        Self::policy_marginal(&self.model, &self.beliefs, slot)
    }

    /// Number of window slots already observed.
    pub fn observed_len(&self) -> usize {
        self.history.len()
    }

    /// Posterior probability of each action at the upcoming transition.
    pub fn upcoming_action_marginal(&self) -> DVector<f64> {
        let idx = self.history.len().saturating_sub(1);
        let mut out = DVector::zeros(self.model.b.len());
        for (p, policy) in self.model.policies.iter().enumerate() {
            out[policy[idx]] += self.beliefs.pi[p];
        }
        out
    }

    /// Window-boundary protocol: close the elapsed window with each head's
    /// accumulated evidence, slide the window if full, re-infer states and
    /// policies, and emit fresh causes for the next window.
    pub fn boundary(&mut self, evidence: &[DVector<f64>]) -> Result<Vec<CausePackage>> {
        if evidence.len() != self.model.head_count() {
            return Err(Error::dims("evidence vs heads", evidence.len(), self.model.head_count()));
        }
        let mut outcomes = Vec::with_capacity(evidence.len());
        for (i, l) in evidence.iter().enumerate() {
            let logits = self.pending_prior[i].map(ln_clamped) + l;
            outcomes.push(softmax(&logits));
        }
        if std::env::var_os("PLANNER_TRACE").is_some() {
            for (i, (l, o)) in evidence.iter().zip(&outcomes).enumerate() {
                eprintln!(
                    "src{i} ev={:?} prior={:?} outcome={:?}",
                    l.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
                    self.pending_prior[i].iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
                    o.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
                );
            }
            eprintln!("marg0={:?}", self.marginal(0).iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>());
        }
        if self.history.len() == self.model.horizon - 1 {
            self.anchor = self.marginal(1);
            self.history.pop_front();
        }
        self.history.push_back(outcomes.clone());
        let hist: Vec<Vec<DVector<f64>>> = self.history.iter().cloned().collect();
        self.beliefs = Self::infer_all(&self.model, &hist, &self.anchor)?;
        let next_slot = self.history.len();
        let s_next = self.marginal(next_slot);
        let mut packages = Vec::with_capacity(evidence.len());
        for (i, o) in outcomes.into_iter().enumerate() {
            let prior = normalize(&self.model.a[i] * &s_next)?;
            let causes = softmax(&prior.map(ln_clamped));
            self.pending_prior[i] = prior.clone();
            packages.push(CausePackage { causes, prior, outcome: o });
        }
        Ok(packages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        let mut m = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(0.0..1.0) + 0.05);
        for c in 0..cols {
            let s: f64 = m.column(c).sum();
            for r in 0..rows {
                m[(r, c)] /= s;
            }
        }
        m
    }

    fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0) + 0.05);
        let s = v.sum();
        v / s
    }

    fn random_model(rng: &mut ChaCha8Rng) -> DiscreteModel {
        let n = rng.gen_range(2..=4);
        let heads = rng.gen_range(1..=2);
        let actions = rng.gen_range(1..=2);
        let horizon = rng.gen_range(2..=3);
        let a: Vec<DMatrix<f64>> = (0..heads)
            .map(|_| {
                let causes = rng.gen_range(2..=3);
                random_stochastic(rng, causes, n)
            })
            .collect();
        let b = (0..actions).map(|_| random_stochastic(rng, n, n)).collect();
        let c = a
            .iter()
            .map(|ai| vec![DVector::from_fn(ai.nrows(), |_, _| rng.gen_range(-1.0..1.0))])
            .collect();
        let d = random_simplex(rng, n);
        DiscreteModel::new(a, b, c, d, horizon).unwrap()
    }

    /// Joint enumeration over all state sequences; the independent route to
    /// the smoothing marginals.
    fn enumerated_marginals(
        model: &DiscreteModel,
        policy: &[usize],
        observed: &[Vec<DVector<f64>>],
        anchor: &DVector<f64>,
    ) -> Vec<DVector<f64>> {
        let n = model.state_count();
        let t_total = model.horizon;
        let mut marg = vec![DVector::zeros(n); t_total];
        let mut z = 0.0;
        let mut seq = vec![0usize; t_total];
        loop {
            let mut w = anchor[seq[0]];
            for t in 1..t_total {
                w *= model.b[policy[t - 1]][(seq[t], seq[t - 1])];
            }
            for (t, obs) in observed.iter().enumerate() {
                for (i, o) in obs.iter().enumerate() {
                    for j in 0..o.len() {
                        w *= model.a[i][(j, seq[t])].powf(o[j]);
                    }
                }
            }
            z += w;
            for t in 0..t_total {
                marg[t][seq[t]] += w;
            }
            // odometer
            let mut t = 0;
            loop {
                seq[t] += 1;
                if seq[t] < n {
                    break;
                }
                seq[t] = 0;
                t += 1;
                if t == t_total {
                    for m in &mut marg {
                        *m /= z;
                    }
                    return marg;
                }
            }
        }
    }

    #[test]
    fn noiseless_chain_recovers_states() {
        // identity likelihood, cyclic-shift transitions, one-hot evidence
        let n = 3;
        let a = DMatrix::identity(n, n);
        let mut b = DMatrix::zeros(n, n);
        for s in 0..n {
            b[((s + 1) % n, s)] = 1.0;
        }
        let d = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let c = vec![vec![DVector::zeros(n)]];
        let model = DiscreteModel::new(vec![a], vec![b], c, d, 3).unwrap();
        let obs = vec![
            vec![DVector::from_vec(vec![1.0, 0.0, 0.0])],
            vec![DVector::from_vec(vec![0.0, 1.0, 0.0])],
            vec![DVector::from_vec(vec![0.0, 0.0, 1.0])],
        ];
        let s = model.infer_states(&model.policies[0].clone(), &obs, &model.d.clone()).unwrap();
        for (t, expect) in [0usize, 1, 2].iter().enumerate() {
            assert_relative_eq!(s[t][*expect], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn smoothed_marginals_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let model = random_model(&mut rng);
            let k = rng.gen_range(0..=model.horizon);
            let observed: Vec<Vec<DVector<f64>>> = (0..k)
                .map(|_| {
                    model
                        .a
                        .iter()
                        .map(|ai| random_simplex(&mut rng, ai.nrows()))
                        .collect()
                })
                .collect();
            let anchor = random_simplex(&mut rng, model.state_count());
            for policy in &model.policies {
                let fast = model.infer_states(policy, &observed, &anchor).unwrap();
                let slow = enumerated_marginals(&model, policy, &observed, &anchor);
                for t in 0..model.horizon {
                    for s in 0..model.state_count() {
                        assert_relative_eq!(fast[t][s], slow[t][s], epsilon = 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_likelihood_leaves_prior_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 3;
        let a = DMatrix::from_element(2, n, 0.5);
        let b = random_stochastic(&mut rng, n, n);
        let d = random_simplex(&mut rng, n);
        let c = vec![vec![DVector::zeros(2)]];
        let model = DiscreteModel::new(vec![a], vec![b], c, d.clone(), 3).unwrap();
        let obs = vec![
            vec![random_simplex(&mut rng, 2)],
            vec![random_simplex(&mut rng, 2)],
        ];
        let policy = model.policies[0].clone();
        let with_obs = model.infer_states(&policy, &obs, &d).unwrap();
        let without = model.infer_states(&policy, &[], &d).unwrap();
        for t in 0..3 {
            for s in 0..n {
                assert_relative_eq!(with_obs[t][s], without[t][s], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn perfect_fit_has_zero_free_energy() {
        let n = 2;
        let a = DMatrix::identity(n, n);
        let mut b = DMatrix::zeros(n, n);
        b[(1, 0)] = 1.0;
        b[(0, 1)] = 1.0;
        let d = DVector::from_vec(vec![1.0, 0.0]);
        let model =
            DiscreteModel::new(vec![a], vec![b], vec![vec![DVector::zeros(n)]], d.clone(), 2)
                .unwrap();
        let states = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        ];
        let obs = vec![
            vec![DVector::from_vec(vec![1.0, 0.0])],
            vec![DVector::from_vec(vec![0.0, 1.0])],
        ];
        let f = model.variational_free_energy(&[0], &states, &obs, &d);
        assert!(f.abs() < 1e-12, "f = {f}");
    }

    #[test]
    fn free_energy_matches_hand_computation() {
        let a = DMatrix::from_vec(2, 2, vec![0.8, 0.2, 0.3, 0.7]);
        let b = DMatrix::from_vec(2, 2, vec![0.9, 0.1, 0.4, 0.6]);
        let d = DVector::from_vec(vec![0.6, 0.4]);
        let model = DiscreteModel::new(
            vec![a.clone()],
            vec![b.clone()],
            vec![vec![DVector::zeros(2)]],
            d.clone(),
            2,
        )
        .unwrap();
        let s1 = DVector::from_vec(vec![0.7, 0.3]);
        let s2 = DVector::from_vec(vec![0.5, 0.5]);
        let o1 = DVector::from_vec(vec![1.0, 0.0]);
        let f = model.variational_free_energy(
            &[0],
            &[s1.clone(), s2.clone()],
            &[vec![o1.clone()]],
            &d,
        );
        // independent scalar recomputation
        let mut hand = 0.0;
        hand += 0.7 * 0.7f64.ln() + 0.3 * 0.3f64.ln();
        hand += 0.5 * 0.5f64.ln() + 0.5 * 0.5f64.ln();
        hand -= 1.0 * (0.7 * 0.8f64.ln() + 0.3 * 0.3f64.ln());
        hand -= 0.7 * 0.6f64.ln() + 0.3 * 0.4f64.ln();
        hand -= 0.5 * (0.9f64.ln() * 0.7 + 0.4f64.ln() * 0.3)
            + 0.5 * (0.1f64.ln() * 0.7 + 0.6f64.ln() * 0.3);
        assert_relative_eq!(f, hand, epsilon = 1e-12);
    }

    #[test]
    fn inference_does_not_increase_free_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let model = random_model(&mut rng);
            let k = rng.gen_range(1..=model.horizon);
            let observed: Vec<Vec<DVector<f64>>> = (0..k)
                .map(|_| {
                    model
                        .a
                        .iter()
                        .map(|ai| random_simplex(&mut rng, ai.nrows()))
                        .collect()
                })
                .collect();
            let anchor = model.d.clone();
            for policy in &model.policies {
                let uniform = vec![
                    DVector::from_element(
                        model.state_count(),
                        1.0 / model.state_count() as f64
                    );
                    model.horizon
                ];
                let f_uniform =
                    model.variational_free_energy(policy, &uniform, &observed, &anchor);
                let inferred = model.infer_states(policy, &observed, &anchor).unwrap();
                let f_inferred =
                    model.variational_free_energy(policy, &inferred, &observed, &anchor);
                assert!(
                    f_inferred <= f_uniform + 1e-9,
                    "{f_inferred} > {f_uniform}"
                );
                // inference is deterministic: repeating it changes nothing
                let again = model.infer_states(policy, &observed, &anchor).unwrap();
                let f_again = model.variational_free_energy(policy, &again, &observed, &anchor);
                assert_relative_eq!(f_inferred, f_again, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_efe_when_preferences_match_and_likelihood_sharp() {
        let n = 2;
        let a = DMatrix::identity(n, n);
        let mut b = DMatrix::zeros(n, n);
        b[(1, 0)] = 1.0;
        b[(1, 1)] = 1.0;
        let d = DVector::from_vec(vec![1.0, 0.0]);
        let model = DiscreteModel::new(
            vec![a],
            vec![b],
            // preferences put all mass exactly on the predicted cause path
            vec![vec![
                DVector::from_vec(vec![200.0, 0.0]),
                DVector::from_vec(vec![0.0, 200.0]),
            ]],
            d.clone(),
            2,
        )
        .unwrap();
        let states = model.infer_states(&[0], &[], &d).unwrap();
        let g = model.expected_free_energy(&states, 0);
        // with a 200-nat preference gap the off-path mass is numerically nil
        assert!(g.abs() < 1e-9, "g = {g}");
    }

    #[test]
    fn preferred_outcome_policy_wins() {
        // two actions: stay at state 0 or move to state 1; preferences want
        // the cause emitted by state 1
        let n = 2;
        let a = DMatrix::identity(n, n);
        let stay = DMatrix::identity(n, n);
        let mut go = DMatrix::zeros(n, n);
        go[(1, 0)] = 1.0;
        go[(1, 1)] = 1.0;
        let d = DVector::from_vec(vec![1.0, 0.0]);
        let c = vec![vec![DVector::from_vec(vec![0.0, 3.0])]];
        let model = DiscreteModel::new(vec![a], vec![stay, go], c, d, 2).unwrap();
        let mut g = DVector::zeros(model.policies.len());
        for (p, policy) in model.policies.iter().enumerate() {
            let states = model.infer_states(policy, &[], &model.d.clone()).unwrap();
            g[p] = model.expected_free_energy(&states, 0);
        }
        let go_idx = model.policies.iter().position(|p| p == &vec![1]).unwrap();
        for (p, _) in model.policies.iter().enumerate() {
            if p != go_idx {
                assert!(g[go_idx] < g[p], "g = {g:?}");
            }
        }
    }

    #[test]
    fn ambiguity_breaks_uniform_preference_ties() {
        // Both policies predict the same cause distribution [0.5, 0.5] at
        // step 2 (identical risk); one reaches it as a mixture of two sharp
        // emitters, the other as a single noisy emitter. Only the ambiguity
        // term separates them.
        let a = DMatrix::from_vec(
            2,
            4,
            vec![0.5, 0.5, 1.0, 0.0, 0.0, 1.0, 0.5, 0.5],
        );
        let mut split = DMatrix::zeros(4, 4);
        split[(1, 0)] = 0.5;
        split[(2, 0)] = 0.5;
        for s in 1..4 {
            split[(s, s)] = 1.0;
        }
        let mut noisy = DMatrix::zeros(4, 4);
        noisy[(3, 0)] = 1.0;
        for s in 1..4 {
            noisy[(s, s)] = 1.0;
        }
        let d = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let c = vec![vec![DVector::zeros(2)]];
        let model = DiscreteModel::new(vec![a], vec![split, noisy], c, d, 2).unwrap();
        let g: Vec<f64> = model
            .policies
            .iter()
            .map(|p| {
                let s = model.infer_states(p, &[], &model.d.clone()).unwrap();
                model.expected_free_energy(&s, 0)
            })
            .collect();
        let kl: Vec<f64> = model
            .policies
            .iter()
            .map(|p| {
                let s = model.infer_states(p, &[], &model.d.clone()).unwrap();
                model.efe_decomposition(&s, 0).0
            })
            .collect();
        let split_idx = model.policies.iter().position(|p| p == &vec![0]).unwrap();
        let noisy_idx = model.policies.iter().position(|p| p == &vec![1]).unwrap();
        assert_relative_eq!(kl[split_idx], kl[noisy_idx], epsilon = 1e-12);
        assert!(
            g[split_idx] < g[noisy_idx],
            "low-entropy columns should win: g = {g:?}"
        );
    }

    #[test]
    fn efe_equals_kl_plus_ambiguity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let model = random_model(&mut rng);
            for policy in &model.policies {
                let s = model.infer_states(policy, &[], &model.d.clone()).unwrap();
                let g = model.expected_free_energy(&s, 0);
                let (kl, amb) = model.efe_decomposition(&s, 0);
                assert_relative_eq!(g, kl + amb, epsilon = 1e-12);
                assert!(kl >= -1e-12, "risk is a KL and cannot be negative");
            }
        }
    }

    /// Independent scalar-loop route to the policy scores, starting from the
    /// enumeration marginals instead of the smoothing ones.
    #[test]
    fn efe_matches_brute_force_and_argmin_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let model = random_model(&mut rng);
            let k = rng.gen_range(0..model.horizon);
            let observed: Vec<Vec<DVector<f64>>> = (0..k)
                .map(|_| {
                    model
                        .a
                        .iter()
                        .map(|ai| random_simplex(&mut rng, ai.nrows()))
                        .collect()
                })
                .collect();
            let mut fast = Vec::new();
            let mut slow = Vec::new();
            for policy in &model.policies {
                let s = model.infer_states(policy, &observed, &model.d.clone()).unwrap();
                fast.push(model.expected_free_energy(&s, k));

                let marg = enumerated_marginals(&model, policy, &observed, &model.d.clone());
                let mut g = 0.0;
                for i in 0..model.head_count() {
                    for t in k..model.horizon {
                        let rows = model.a[i].nrows();
                        for j in 0..rows {
                            let mut vj = 0.0;
                            for st in 0..model.state_count() {
                                vj += model.a[i][(j, st)] * marg[t][st];
                            }
                            if vj > 0.0 {
                                g += vj * (vj.ln() - model.c[i][t][j]);
                            }
                        }
                        for st in 0..model.state_count() {
                            let mut h = 0.0;
                            for j in 0..rows {
                                let p = model.a[i][(j, st)];
                                if p > 0.0 {
                                    h -= p * p.ln();
                                }
                            }
                            g += marg[t][st] * h;
                        }
                    }
                }
                slow.push(g);
            }
            for (f, s) in fast.iter().zip(&slow) {
                assert_relative_eq!(f, s, epsilon = 1e-6);
            }
            let argmin_fast = fast
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let argmin_slow = slow
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmin_fast, argmin_slow);
        }
    }

    #[test]
    fn policy_posterior_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(&mut rng);
        let np = 3;
        let f = DVector::zeros(np);
        let uniform = model.infer_policies(&DVector::from_element(np, 2.5), &f);
        for i in 0..np {
            assert_relative_eq!(uniform[i], 1.0 / np as f64, epsilon = 1e-12);
        }
        let two = model.infer_policies(&DVector::from_vec(vec![0.0, 3f64.ln()]), &DVector::zeros(2));
        assert_relative_eq!(two[0], 0.75, epsilon = 1e-12);
        assert_relative_eq!(two[1], 0.25, epsilon = 1e-12);
        let g = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let shifted = g.map(|x| x + 11.0);
        let p1 = model.infer_policies(&g, &DVector::zeros(3));
        let p2 = model.infer_policies(&shifted, &DVector::zeros(3));
        for i in 0..3 {
            assert_relative_eq!(p1[i], p2[i], epsilon = 1e-12);
        }
        assert!((p1.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cause_relabeling_preserves_policy_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 3;
        let b0 = random_stochastic(&mut rng, n, n);
        let b1 = random_stochastic(&mut rng, n, n);
        let d = random_simplex(&mut rng, n);
        let build = |perm: &[usize]| {
            let mut a = DMatrix::zeros(n, n);
            for s in 0..n {
                a[(perm[s], s)] = 1.0;
            }
            DiscreteModel::new(
                vec![a],
                vec![b0.clone(), b1.clone()],
                vec![vec![DVector::zeros(n)]],
                d.clone(),
                3,
            )
            .unwrap()
        };
        let id = build(&[0, 1, 2]);
        let relabeled = build(&[2, 0, 1]);
        let score = |m: &DiscreteModel| -> Vec<f64> {
            m.policies
                .iter()
                .map(|p| {
                    let s = m.infer_states(p, &[], &m.d.clone()).unwrap();
                    m.expected_free_energy(&s, 0)
                })
                .collect()
        };
        let g1 = score(&id);
        let g2 = score(&relabeled);
        for (a, b) in g1.iter().zip(&g2) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn planner_single_policy_is_hmm_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 3;
        let a = random_stochastic(&mut rng, 3, n);
        let b = random_stochastic(&mut rng, n, n);
        let d = random_simplex(&mut rng, n);
        let model = DiscreteModel::new(
            vec![a.clone()],
            vec![b.clone()],
            vec![vec![DVector::zeros(3)]],
            d.clone(),
            3,
        )
        .unwrap();
        assert_eq!(model.policies.len(), 1);
        let mut planner = Planner::new(model).unwrap();
        assert_eq!(planner.beliefs.pi.len(), 1);
        assert_relative_eq!(planner.beliefs.pi[0], 1.0, epsilon = 1e-14);

        let l1 = DVector::from_vec(vec![2.0, 0.0, -1.0]);
        let packages = planner.boundary(&[l1.clone()]).unwrap();
        assert_eq!(packages.len(), 1);
        // the stored outcome is the softmax of prior logits plus evidence
        let prior0 = &a * &d;
        let expect = softmax(&(prior0.map(ln_clamped) + &l1));
        for j in 0..3 {
            assert_relative_eq!(packages[0].outcome[j], expect[j], epsilon = 1e-12);
        }
        // single policy: marginals are the smoothed chain of that policy
        let chain = planner
            .model
            .infer_states(&[0, 0], &[vec![expect.clone()]], &planner.model.d.clone())
            .unwrap();
        for s in 0..n {
            assert_relative_eq!(planner.marginal(0)[s], chain[0][s], epsilon = 1e-12);
        }
    }

    #[test]
    fn receding_horizon_slides_and_stays_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = {
            let n = 3;
            let a = random_stochastic(&mut rng, 3, n);
            let b0 = random_stochastic(&mut rng, n, n);
            let b1 = random_stochastic(&mut rng, n, n);
            let d = random_simplex(&mut rng, n);
            DiscreteModel::new(
                vec![a],
                vec![b0, b1],
                vec![vec![DVector::zeros(3)]],
                d,
                3,
            )
            .unwrap()
        };
        let mut planner = Planner::new(model).unwrap();
        for tick in 0..12 {
            let l = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let packages = planner.boundary(&[l]).unwrap();
            assert!(planner.observed_len() <= 2, "window never exceeds horizon - 1");
            assert!(planner.observed_len() >= 1);
            for p in &packages {
                assert!((p.causes.sum() - 1.0).abs() < 1e-12, "tick {tick}");
                assert!((p.prior.sum() - 1.0).abs() < 1e-12);
                assert!(p.causes.iter().all(|&x| x >= 0.0));
            }
            assert!((planner.beliefs.pi.sum() - 1.0).abs() < 1e-12);
            let act = planner.upcoming_action_marginal();
            assert!((act.sum() - 1.0).abs() < 1e-12);
        }
    }

    /// Four-phase progression: states advance only under the `proceed`
    /// action; evidence tracks the current phase; preferences favor the
    /// final phase. The emitted cause priors walk through the phases.
    #[test]
    fn planner_progression_walks_through_phases() {
        let n = 4;
        let mut a = DMatrix::from_element(n, n, 0.1 / 3.0);
        for s in 0..n {
            a[(s, s)] = 0.9;
        }
        let hold = DMatrix::identity(n, n);
        let mut proceed = DMatrix::zeros(n, n);
        for s in 0..n - 1 {
            proceed[(s + 1, s)] = 0.9;
            proceed[(s, s)] = 0.1;
        }
        proceed[(n - 1, n - 1)] = 1.0;
        let d = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let c = vec![vec![DVector::from_vec(vec![0.0, 1.0, 2.0, 4.0])]];
        let model = DiscreteModel::new(vec![a], vec![hold, proceed], c, d, 4).unwrap();
        let mut planner = Planner::new(model).unwrap();

        let mut seen_phase = vec![0usize];
        let mut current = 0usize;
        for _ in 0..6 {
            // evidence consistent with the phase the prior expects next
            let prior = planner.pending_prior[0].clone();
            let phase = prior.argmax().0;
            let mut l = DVector::from_element(n, 0.0);
            l[phase] = 4.0;
            planner.boundary(&[l]).unwrap();
            let installed = planner.pending_prior[0].argmax().0;
            assert!(
                installed >= current,
                "progression went backwards: {current} -> {installed}"
            );
            if installed > current {
                current = installed;
                seen_phase.push(installed);
            }
        }
        assert_eq!(*seen_phase.last().unwrap(), n - 1, "never reached the final phase");
        assert!(seen_phase.len() >= 3, "skipped phases: {seen_phase:?}");
    }
}
