//! Agents: belief machinery bound to one arm of the world. An agent consumes
//! a named observation bundle, updates its beliefs one tick, integrates its
//! action state (joint velocities), and emits a log row. Hybrid heads, cause
//! switches, and a discrete planner over window evidence hang off the
//! network variant.

use nalgebra::DVector;

use crate::discrete::Planner;
use crate::hybrid::HybridUnit;
use crate::kinematics::{IeNetwork, ObsBundle};
use crate::unit::ContinuousUnit;
use crate::{Error, Result};

/// Latched cause rewrite: the first time a scalar channel crosses the
/// threshold, the named attachment's causes are replaced. Implements
/// tactile-gated behavior switches without a full discrete planner.
pub struct CauseSwitch {
    pub channel: String,
    pub threshold: f64,
    pub attachment: String,
    pub after: DVector<f64>,
    pub fired: bool,
}

/// Where one planner outcome modality gets its window evidence.
pub enum EvidenceSource {
    /// A hybrid head on a network dynamics attachment, by name.
    Attachment(String),
    /// A hybrid head on an auxiliary flat unit, by index.
    Aux(usize),
}

pub struct PlannerBinding {
    pub planner: Planner,
    /// One source per outcome modality, planner order.
    pub sources: Vec<EvidenceSource>,
}

/// A self-contained flat hybrid unit riding along with a network agent
/// (e.g. a tactile belief). Sensor-only: its action output is ignored.
pub struct AuxUnit {
    pub name: String,
    pub unit: HybridUnit,
    /// Observation name per base channel; None leaves the channel silent.
    pub channels: Vec<Option<String>>,
}

pub struct AgentStep {
    /// Joint velocity command for the agent's arm, if it has one.
    pub action: Option<DVector<f64>>,
    pub free_energy: f64,
    pub log: Vec<(String, f64)>,
    /// True on ticks where a hybrid/planner window boundary fired.
    pub boundary: bool,
}

fn gather_slots(bundle: &ObsBundle, names: &[Option<String>]) -> Vec<Option<DVector<f64>>> {
    names
        .iter()
        .map(|n| n.as_ref().and_then(|n| bundle.get(n).cloned()))
        .collect()
}

/// Flat continuous unit bound to an arm.
pub struct UnitAgent {
    pub unit: ContinuousUnit,
    /// Observation name per unit channel.
    pub channels: Vec<Option<String>>,
    pub arm: Option<usize>,
    pub velocity: DVector<f64>,
}

impl UnitAgent {
    pub fn tick(&mut self, bundle: &ObsBundle, dt: f64) -> Result<AgentStep> {
        let obs = gather_slots(bundle, &self.channels);
        let (da, rep) = self.unit.step(&obs, dt)?;
        if let Some(da) = &da {
            self.velocity.axpy(dt, da, 1.0);
        }
        let mut log = Vec::new();
        for i in 0..self.unit.x.dim() {
            log.push((format!("b.mu0.{i}"), self.unit.x.mu[i]));
            log.push((format!("b.mu1.{i}"), self.unit.x.mu_prime[i]));
        }
        for i in 0..self.unit.v.len() {
            log.push((format!("v.{i}"), self.unit.v[i]));
        }
        log.push(("F".into(), rep.free_energy));
        Ok(AgentStep {
            action: self.arm.map(|_| self.velocity.clone()),
            free_energy: rep.free_energy,
            log,
            boundary: false,
        })
    }
}

/// Flat hybrid unit (model head over intentions) bound to an arm; windows
/// close with a local model comparison.
pub struct HybridAgent {
    pub unit: HybridUnit,
    pub channels: Vec<Option<String>>,
    pub arm: Option<usize>,
    pub velocity: DVector<f64>,
}

impl HybridAgent {
    pub fn tick(&mut self, bundle: &ObsBundle, dt: f64) -> Result<AgentStep> {
        let obs = gather_slots(bundle, &self.channels);
        let at_boundary = self.unit.head.steps_in_window + 1 >= self.unit.head.window;
        let (da, rep) = self.unit.step(&obs, dt, true)?;
        if let Some(da) = &da {
            self.velocity.axpy(dt, da, 1.0);
        }
        let mut log = Vec::new();
        for i in 0..self.unit.base.x.dim() {
            log.push((format!("b.mu0.{i}"), self.unit.base.x.mu[i]));
            log.push((format!("b.mu1.{i}"), self.unit.base.x.mu_prime[i]));
        }
        for m in 0..self.unit.head.causes.len() {
            log.push((format!("v.{m}"), self.unit.head.causes[m]));
        }
        log.push(("F".into(), rep.free_energy));
        Ok(AgentStep {
            action: self.arm.map(|_| self.velocity.clone()),
            free_energy: rep.free_energy,
            log,
            boundary: at_boundary,
        })
    }
}

/// Hierarchical network agent: the network plus auxiliary units, cause
/// switches, and an optional discrete planner fed by window evidence.
pub struct NetworkAgent {
    pub net: IeNetwork,
    pub arm: Option<usize>,
    pub velocity: DVector<f64>,
    pub aux: Vec<AuxUnit>,
    pub switches: Vec<CauseSwitch>,
    pub planner: Option<PlannerBinding>,
}

impl NetworkAgent {
    pub fn new(net: IeNetwork, arm: Option<usize>) -> Self {
        let dof = net.self_module_count();
        NetworkAgent {
            net,
            arm,
            velocity: DVector::zeros(dof),
            aux: Vec::new(),
            switches: Vec::new(),
            planner: None,
        }
    }

    /// Validates that every planner evidence source exists, carries a head,
    /// and that all heads share one window length.
    pub fn bind_planner(&mut self, binding: PlannerBinding) -> Result<()> {
        let mut window = None;
        for src in &binding.sources {
            let w = match src {
                EvidenceSource::Attachment(name) => {
                    let att = self
                        .net
                        .attachments
                        .iter()
                        .find(|a| &a.name == name)
                        .ok_or_else(|| Error::config(format!("no attachment '{name}'")))?;
                    att.head
                        .as_ref()
                        .ok_or_else(|| Error::config(format!("attachment '{name}' has no head")))?
                        .window
                }
                EvidenceSource::Aux(i) => {
                    self.aux
                        .get(*i)
                        .ok_or_else(|| Error::config(format!("no auxiliary unit {i}")))?
                        .unit
                        .head
                        .window
                }
            };
            if *window.get_or_insert(w) != w {
                return Err(Error::config("planner sources must share one window length"));
            }
        }
        self.planner = Some(binding);
        Ok(())
    }

    fn source_elapsed(&self, src: &EvidenceSource) -> bool {
        match src {
            EvidenceSource::Attachment(name) => self
                .net
                .attachments
                .iter()
                .find(|a| &a.name == name)
                .and_then(|a| a.head.as_ref())
                .map(|h| h.window_elapsed())
                .unwrap_or(false),
            EvidenceSource::Aux(i) => self.aux[*i].unit.head.window_elapsed(),
        }
    }

    pub fn tick(&mut self, bundle: &ObsBundle, dt: f64) -> Result<AgentStep> {
        let rep = self.net.tick(bundle, dt)?;
        let mut free_energy = rep.free_energy;

        let local = self.planner.is_none();
        for aux in &mut self.aux {
            let obs = gather_slots(bundle, &aux.channels);
            if std::env::var_os("AUX_TRACE").is_some() {
                eprintln!("aux {} obs={:?} bel={:?}", aux.name,
                    obs.iter().map(|o| o.as_ref().map(|v| v[0])).collect::<Vec<_>>(),
                    aux.unit.base.x.mu.as_slice());
            }
            let (_, arep) = aux.unit.step(&obs, dt, local)?;
            free_energy += arep.free_energy;
        }

        let mut boundary = false;
        if self.planner.is_some() {
            let elapsed = {
                let pb = self.planner.as_ref().unwrap();
                !pb.sources.is_empty() && pb.sources.iter().all(|s| self.source_elapsed(s))
            };
            if elapsed {
                boundary = true;
                let pb = self.planner.as_mut().unwrap();
                let mut evidence = Vec::with_capacity(pb.sources.len());
                for src in &pb.sources {
                    let l = match src {
                        EvidenceSource::Attachment(name) => self
                            .net
                            .attachment_mut(name)
                            .expect("validated at bind")
                            .head
                            .as_mut()
                            .expect("validated at bind")
                            .take_evidence(),
                        EvidenceSource::Aux(i) => self.aux[*i].unit.head.take_evidence(),
                    };
                    evidence.push(l);
                }
                let packages = pb.planner.boundary(&evidence)?;
                for (src, pkg) in pb.sources.iter().zip(packages) {
                    match src {
                        EvidenceSource::Attachment(name) => {
                            let head = self
                                .net
                                .attachment_mut(name)
                                .expect("validated at bind")
                                .head
                                .as_mut()
                                .expect("validated at bind");
                            head.set_causes(pkg.causes, pkg.prior);
                        }
                        EvidenceSource::Aux(i) => {
                            let unit = &mut self.aux[*i].unit;
                            unit.head.set_causes(pkg.causes, pkg.prior);
                            unit.sync_causes();
                        }
                    }
                }
            }
        } else {
            for att in &mut self.net.attachments {
                if let Some(head) = &mut att.head {
                    if head.window_elapsed() {
                        head.bmc_update();
                        boundary = true;
                    }
                }
            }
        }

        for sw in &mut self.switches {
            if sw.fired {
                continue;
            }
            let Some(v) = bundle.get(&sw.channel) else { continue };
            if v[0] > sw.threshold {
                if let Some(att) = self.net.attachment_mut(&sw.attachment) {
                    att.causes = sw.after.clone();
                }
                sw.fired = true;
            }
        }

        if self.arm.is_some() {
            self.velocity.axpy(dt, &rep.action_derivative, 1.0);
        }

        let mut log = Vec::new();
        for m in 0..self.net.modules.len() {
            for p in 0..self.net.pathways.len() {
                if !self.net.has_block(m, p) {
                    continue;
                }
                let module = self.net.modules[m].name.clone();
                let pathway = self.net.pathways[p].name.clone();
                let b = self.net.block(m, p);
                for k in 0..2 {
                    log.push((format!("b.mu0.{module}.{pathway}.intr{k}"), b.intr.mu[k]));
                }
                for k in 0..3 {
                    log.push((format!("b.mu0.{module}.{pathway}.extr{k}"), b.extr.mu[k]));
                }
            }
        }
        for att in &self.net.attachments {
            let causes = match &att.head {
                Some(h) => &h.causes,
                None => &att.causes,
            };
            for m in 0..causes.len() {
                log.push((format!("v.{}.{m}", att.name), causes[m]));
            }
        }
        for aux in &self.aux {
            for m in 0..aux.unit.head.causes.len() {
                log.push((format!("v.{}.{m}", aux.name), aux.unit.head.causes[m]));
            }
        }
        if let Some(pb) = &self.planner {
            let slot = pb.planner.observed_len();
            let s = pb.planner.marginal(slot);
            for k in 0..s.len() {
                log.push((format!("s.{k}"), s[k]));
            }
        }
        log.push(("F".into(), free_energy));

        Ok(AgentStep {
            action: self.arm.map(|_| self.velocity.clone()),
            free_energy,
            log,
            boundary,
        })
    }

}

pub enum Agent {
    Unit(UnitAgent),
    Hybrid(HybridAgent),
    Network(NetworkAgent),
}

impl Agent {
    pub fn tick(&mut self, bundle: &ObsBundle, dt: f64) -> Result<AgentStep> {
        match self {
            Agent::Unit(a) => a.tick(bundle, dt),
            Agent::Hybrid(a) => a.tick(bundle, dt),
            Agent::Network(a) => a.tick(bundle, dt),
        }
    }

    pub fn arm(&self) -> Option<usize> {
        match self {
            Agent::Unit(a) => a.arm,
            Agent::Hybrid(a) => a.arm,
            Agent::Network(a) => a.arm,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::DiscreteModel;
    use crate::hybrid::{HybridHead, ReducedModel};
    use crate::intention::Intention;
    use crate::kinematics::{
        DynamicsAttachment, ExtrinsicState, Frame, ModuleSpec, Site, SiteComponent, SELF_PATHWAY,
    };
    use crate::math::{GeneralizedBelief, Precision};
    use crate::unit::{ActionCoupling, Channel, PointAttractor, SelectState};
    use nalgebra::DMatrix;

    fn one_joint_world_loop(agent: &mut Agent, target: f64, ticks: usize, dt: f64) -> f64 {
        let mut theta = 0.0f64;
        for _ in 0..ticks {
            let mut bundle = ObsBundle::new();
            bundle.insert("proprio.m0", DVector::from_vec(vec![theta]));
            let step = agent.tick(&bundle, dt).unwrap();
            if let Some(a) = step.action {
                theta += dt * a[0];
            }
        }
        (theta - target).abs()
    }

    #[test]
    fn unit_agent_integrates_velocity_and_logs() {
        let target = 1.1;
        let unit = ContinuousUnit {
            x: GeneralizedBelief::zeros(1),
            v: DVector::zeros(1),
            eta_x: None,
            eta_v: None,
            channels: vec![Channel {
                name: "proprio".into(),
                map: Box::new(SelectState { indices: vec![0], state_dim: 1, cause_dim: 1 }),
                precision: Precision::uniform(1, 8.0),
            }],
            dynamics: Some(crate::unit::DynamicsTerm {
                map: Box::new(PointAttractor { rho: DVector::from_vec(vec![target]), cause_dim: 1 }),
                precision: Precision::uniform(1, 1.5),
            }),
            action: Some(ActionCoupling { channel: 0 }),
        };
        let mut agent = Agent::Unit(UnitAgent {
            unit,
            channels: vec![Some("proprio.m0".into())],
            arm: Some(0),
            velocity: DVector::zeros(1),
        });
        let err = one_joint_world_loop(&mut agent, target, 4000, 0.1);
        assert!(err < 0.02, "reach error {err}");
        let mut bundle = ObsBundle::new();
        bundle.insert("proprio.m0", DVector::from_vec(vec![target]));
        let step = agent.tick(&bundle, 0.1).unwrap();
        let names: Vec<&str> = step.log.iter().map(|(n, _)| n.as_str()).collect();
        assert!(names.contains(&"b.mu0.0") && names.contains(&"v.0") && names.contains(&"F"));
    }

    #[test]
    fn missing_channels_become_silent_slots() {
        let unit = ContinuousUnit {
            x: GeneralizedBelief::zeros(1),
            v: DVector::zeros(1),
            eta_x: None,
            eta_v: None,
            channels: vec![Channel {
                name: "proprio".into(),
                map: Box::new(SelectState { indices: vec![0], state_dim: 1, cause_dim: 1 }),
                precision: Precision::uniform(1, 8.0),
            }],
            dynamics: None,
            action: None,
        };
        let mut agent = Agent::Unit(UnitAgent {
            unit,
            channels: vec![Some("nope".into())],
            arm: None,
            velocity: DVector::zeros(0),
        });
        let step = agent.tick(&ObsBundle::new(), 0.05).unwrap();
        assert!(step.action.is_none());
        assert_eq!(step.free_energy, 0.0);
    }

    fn stay_reach_head(window: usize, targets: &[f64]) -> HybridHead {
        let mut models = vec![ReducedModel {
            intention: Intention::stay("stay", 1),
            precision: Precision::uniform(1, 1.0),
        }];
        for (i, &t) in targets.iter().enumerate() {
            models.push(ReducedModel {
                intention: Intention::new(
                    format!("go{i}"),
                    DMatrix::zeros(1, 1),
                    DVector::from_vec(vec![t]),
                )
                .unwrap(),
                precision: Precision::uniform(1, 1.0),
            });
        }
        let n = models.len();
        HybridHead::new(
            models,
            Precision::uniform(1, 1.0),
            Precision::uniform(1, 2.0),
            DVector::from_element(n, 1.0 / n as f64),
            window,
        )
        .unwrap()
    }

    /// One-joint network agent whose reach attachment carries a hybrid head;
    /// a two-phase planner walks it to the first target, then the second.
    #[test]
    fn planner_boundaries_steer_the_network() {
        let dt = 0.1;
        let spec = [ModuleSpec { name: "m0".into(), parent: None, length: 0.5, angle: 0.0 }];
        let mut net =
            IeNetwork::new(ExtrinsicState::origin(), &spec, &Precision::uniform(3, 2.0), 8.0)
                .unwrap();
        let head = stay_reach_head(25, &[0.9, -0.6]);
        net.add_attachment(DynamicsAttachment {
            name: "move".into(),
            site: Site {
                components: vec![SiteComponent {
                    module: 0,
                    pathway: SELF_PATHWAY,
                    frame: Frame::Intrinsic,
                    comps: vec![0],
                }],
            },
            intentions: vec![],
            causes: DVector::zeros(0),
            head: Some(head),
            repulsors: vec![],
            precision: Precision::uniform(1, 1.5),
        })
        .unwrap();
        let mut agent = NetworkAgent::new(net, Some(0));

        // two states (idle / busy), outcomes = the three reduced models.
        // busy emits "go1" or "stay" (arriving and holding both count);
        // the preference rewards seeing "go1", so policies that advance win.
        let a = vec![DMatrix::from_row_slice(
            3,
            2,
            &[
                0.40, 0.45, // stay
                0.50, 0.05, // go0
                0.10, 0.50, // go1
            ],
        )];
        let b = vec![
            DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.9, 1.0]), // advance
            DMatrix::identity(2, 2),                              // hold
        ];
        let c = vec![vec![DVector::from_vec(vec![0.0, 0.0, 2.5])]];
        let d = DVector::from_vec(vec![1.0, 0.0]);
        let model = DiscreteModel::new(a, b, c, d, 3).unwrap();
        agent
            .bind_planner(PlannerBinding {
                planner: Planner::new(model).unwrap(),
                sources: vec![EvidenceSource::Attachment("move".into())],
            })
            .unwrap();

        let mut agent = Agent::Network(agent);
        let mut theta = 0.0f64;
        let mut boundaries = 0;
        for _ in 0..2000 {
            let mut bundle = ObsBundle::new();
            bundle.insert("proprio.m0", DVector::from_vec(vec![theta]));
            let step = agent.tick(&bundle, dt).unwrap();
            if step.boundary {
                boundaries += 1;
            }
            theta += dt * step.action.unwrap()[0];
        }
        assert_eq!(boundaries, 2000 / 25);
        let Agent::Network(net_agent) = &agent else { unreachable!() };
        let head = net_agent.net.attachments[0].head.as_ref().unwrap();
        let simplex: f64 = head.causes.iter().sum();
        assert!((simplex - 1.0).abs() < 1e-9);
        // commitment should favor the second target's intention over the
        // first and the joint should have moved well into negative angles
        // (the mixture equilibrium sits near -0.46)
        assert!(head.causes[2] > head.causes[1], "causes {:?}", head.causes);
        assert!(theta < -0.25, "theta {theta}");
        let pb = net_agent.planner.as_ref().unwrap();
        let s = pb.planner.marginal(pb.planner.observed_len());
        assert!(s[1] > 0.6, "state marginal {s:?}");
    }

    #[test]
    fn cause_switch_latches_on_threshold_crossing() {
        let spec = [ModuleSpec { name: "m0".into(), parent: None, length: 0.5, angle: 0.0 }];
        let mut net =
            IeNetwork::new(ExtrinsicState::origin(), &spec, &Precision::uniform(3, 2.0), 8.0)
                .unwrap();
        let go = |t: f64, name: &str| {
            Intention::new(name, DMatrix::zeros(1, 1), DVector::from_vec(vec![t])).unwrap()
        };
        net.add_attachment(DynamicsAttachment {
            name: "move".into(),
            site: Site {
                components: vec![SiteComponent {
                    module: 0,
                    pathway: SELF_PATHWAY,
                    frame: Frame::Intrinsic,
                    comps: vec![0],
                }],
            },
            intentions: vec![go(0.8, "first"), go(-0.4, "second")],
            causes: DVector::from_vec(vec![1.0, 0.0]),
            head: None,
            repulsors: vec![],
            precision: Precision::uniform(1, 1.5),
        })
        .unwrap();
        let mut agent = NetworkAgent::new(net, Some(0));
        agent.switches.push(CauseSwitch {
            channel: "tactile".into(),
            threshold: 0.5,
            attachment: "move".into(),
            after: DVector::from_vec(vec![0.0, 1.0]),
            fired: false,
        });

        let mut bundle = ObsBundle::new();
        bundle.insert("proprio.m0", DVector::from_vec(vec![0.0]));
        bundle.insert("tactile", DVector::from_vec(vec![0.1]));
        agent.tick(&bundle, 0.05).unwrap();
        assert_eq!(agent.net.attachments[0].causes[0], 1.0, "below threshold: unchanged");
        bundle.insert("tactile", DVector::from_vec(vec![0.9]));
        agent.tick(&bundle, 0.05).unwrap();
        assert_eq!(agent.net.attachments[0].causes[1], 1.0, "switch fired");
        bundle.insert("tactile", DVector::from_vec(vec![0.0]));
        agent.net.attachments[0].causes = DVector::from_vec(vec![0.0, 1.0]);
        agent.tick(&bundle, 0.05).unwrap();
        assert_eq!(agent.net.attachments[0].causes[1], 1.0, "latched");
    }
}
