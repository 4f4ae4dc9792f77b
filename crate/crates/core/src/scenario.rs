//! Declarative task definitions: a structured-text file binds a world layout,
//! agents (flat units or hierarchical networks with heads, switches, and a
//! planner), logging, and named assertions with tolerances. The runner steps
//! the world and agents closed-loop, logs one CSV row per tick, evaluates the
//! assertions, and writes a per-run summary. Runs are fully deterministic
//! given the file and the seed.

use std::collections::HashMap;
use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::agent::{
    Agent, AuxUnit, CauseSwitch, EvidenceSource, HybridAgent, NetworkAgent, PlannerBinding,
    UnitAgent,
};
use crate::discrete::{DiscreteModel, Planner};
use crate::hybrid::{HybridHead, HybridUnit, ReducedModel};
use crate::intention::Intention;
use crate::kinematics::{
    DynamicsAttachment, ExtrinsicState, Frame, IeNetwork, IntrinsicState, ModuleSpec, ObsBundle,
    Repulsor, Site, SiteComponent, VisionChannel, SELF_PATHWAY,
};
use crate::math::{GeneralizedBelief, Precision};
use crate::unit::{
    ActionCoupling, CauseAttractor, Channel, ContinuousUnit, DynamicsTerm, HandFk, HandFkAndCause,
    JacobianTransposeReach, PointAttractor, PriorTerm, SelectCause, SelectState,
};
use crate::world::{ChannelSource, Gripper, MotionLaw, NoiseConfig, ObsChannel, World};
use crate::{Error, Result};

pub const CSV_SCHEMA_LINE: &str = "# schema=1";

fn deg(x: f64) -> f64 {
    x.to_radians()
}

fn degs(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| deg(x)).collect()
}

// ---------------------------------------------------------------------------
// configuration schema

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub run: RunSection,
    pub world: WorldSection,
    #[serde(default)]
    pub agents: Vec<AgentSection>,
    #[serde(default)]
    pub logging: LoggingSection,
    #[serde(default)]
    pub assertions: Vec<AssertionSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub dt: f64,
    pub ticks: usize,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    #[serde(default)]
    pub noise: Option<NoiseSection>,
    #[serde(default)]
    pub arms: Vec<ArmSection>,
    #[serde(default)]
    pub objects: Vec<ObjectSection>,
    #[serde(default)]
    pub channels: Vec<ChannelSection>,
    #[serde(default)]
    pub events: Vec<EventSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub silent: bool,
    pub proprio: Option<f64>,
    pub vision: Option<f64>,
    pub touch: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSection {
    pub name: String,
    /// "revolute" (default) or "cartesian"
    #[serde(default = "default_revolute")]
    pub kind: String,
    /// base pose [x, y, orientation_deg]
    #[serde(default)]
    pub root: [f64; 3],
    #[serde(default)]
    pub lengths: Vec<f64>,
    #[serde(default)]
    pub angles_deg: Vec<f64>,
    /// joint tree: parent index per joint, -1 for the base (default: chain)
    pub parents: Option<Vec<i64>>,
    pub effector: Option<usize>,
    /// cartesian arms: initial coordinates
    pub position: Option<[f64; 2]>,
    pub gripper: Option<GripperSection>,
}

fn default_revolute() -> String {
    "revolute".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperSection {
    /// [joint index, fully-closed angle in degrees] per finger joint
    pub joints: Vec<(usize, f64)>,
    #[serde(default = "default_grasp")]
    pub grasp_threshold: f64,
    #[serde(default = "default_release")]
    pub release_threshold: f64,
}

fn default_grasp() -> f64 {
    0.7
}
fn default_release() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSection {
    pub name: String,
    pub position: [f64; 2],
    #[serde(default)]
    pub radius: f64,
    #[serde(default)]
    pub motion: Option<MotionSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSection {
    pub kind: String,
    pub velocity: Option<[f64; 2]>,
    pub center: Option<[f64; 2]>,
    pub omega: Option<f64>,
    pub waypoints: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub name: String,
    pub kind: String,
    pub arm: Option<String>,
    pub object: Option<String>,
    pub joint: Option<usize>,
    pub comps: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSection {
    pub tick: u64,
    pub kind: String,
    pub object: String,
    pub position: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub name: String,
    pub arm: Option<String>,
    /// world joint indices driven by the agent's action components
    pub joints: Option<Vec<usize>>,
    pub unit: Option<UnitSection>,
    pub hybrid: Option<HybridSection>,
    pub network: Option<NetworkSection>,
    #[serde(default)]
    pub aux: Vec<AuxSection>,
    #[serde(default)]
    pub switches: Vec<SwitchSection>,
    pub planner: Option<PlannerSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitSection {
    pub state: Option<Vec<f64>>,
    pub state_deg: Option<Vec<f64>>,
    #[serde(default)]
    pub causes: Vec<f64>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    pub dynamics: Option<DynSpec>,
    /// index of the proprioceptive channel that drives the action
    pub action: Option<usize>,
    pub prior_x: Option<PriorSpec>,
    pub prior_v: Option<PriorSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridSection {
    pub state: Option<Vec<f64>>,
    pub state_deg: Option<Vec<f64>>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    #[serde(default)]
    pub models: Vec<IntentionSection>,
    pub head: HeadSection,
    pub action: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    /// world observation feeding this channel
    pub channel: String,
    pub kind: String,
    pub indices: Option<Vec<usize>>,
    pub lengths: Option<Vec<f64>>,
    pub root: Option<[f64; 3]>,
    pub precision: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynSpec {
    pub kind: String,
    pub values: Option<Vec<f64>>,
    pub values_deg: Option<Vec<f64>>,
    pub lengths: Option<Vec<f64>>,
    pub root: Option<[f64; 3]>,
    pub gain: Option<f64>,
    pub precision: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub mean: Option<Vec<f64>>,
    pub mean_deg: Option<Vec<f64>>,
    pub precision: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub pi_extr: f64,
    pub pi_proprio: f64,
    /// base pose [x, y, orientation_deg]; defaults to the bound arm's root
    pub root: Option<[f64; 3]>,
    pub proprio: Option<ProprioSpec>,
    pub modules: Vec<ModuleSection>,
    #[serde(default)]
    pub pathways: Vec<PathwaySection>,
    #[serde(default)]
    pub attachments: Vec<AttachmentSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProprioSpec {
    pub channel: String,
    /// components of the channel vector, one per module (default 0..n)
    pub joints: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleSection {
    pub name: String,
    pub parent: Option<String>,
    pub length: f64,
    #[serde(default)]
    pub angle_deg: f64,
    pub vision: Option<VisionSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisionSpec {
    pub channel: String,
    #[serde(default = "default_xy")]
    pub comps: Vec<usize>,
    pub precision: f64,
}

fn default_xy() -> Vec<usize> {
    vec![0, 1]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathwaySection {
    pub name: String,
    /// module the entity pathway copies the chain up to; absent = root entity
    pub attach: Option<String>,
    pub channel: String,
    #[serde(default = "default_xy")]
    pub comps: Vec<usize>,
    pub precision: f64,
    pub pi_extr: Option<f64>,
    /// precision pinning copied segment lengths to their initial values
    pub length_prior: Option<f64>,
    #[serde(rename = "virtual")]
    pub virtual_level: Option<VirtualSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirtualSpec {
    pub length: f64,
    #[serde(default)]
    pub angle_deg: f64,
    pub vision: Option<VisionSpec>,
    /// optional [angle_weight, length_weight] prior toward the initial state
    pub prior: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachmentSection {
    pub name: String,
    pub site: Vec<SiteSpec>,
    pub precision: f64,
    #[serde(default)]
    pub intentions: Vec<IntentionSection>,
    pub causes: Option<Vec<f64>>,
    pub head: Option<HeadSection>,
    #[serde(default)]
    pub repulsors: Vec<RepulsorSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub module: String,
    #[serde(default = "default_self")]
    pub pathway: String,
    /// "extr" (default) or "intr"
    #[serde(default = "default_extr")]
    pub frame: String,
    pub comps: Vec<usize>,
}

fn default_self() -> String {
    "self".into()
}
fn default_extr() -> String {
    "extr".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentionSection {
    pub name: String,
    pub kind: String,
    pub values: Option<Vec<f64>>,
    pub values_deg: Option<Vec<f64>>,
    /// (destination group, source group) pairs over site components
    pub pairs: Option<Vec<[usize; 2]>>,
    pub weights: Option<Vec<Vec<f64>>>,
    pub bias: Option<Vec<f64>>,
    /// reduced-model precision when the intention sits under a head
    pub precision: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSection {
    pub window: usize,
    /// full-model trajectory precision (flat hybrid units and aux units)
    pub precision: Option<f64>,
    pub posterior_precision: f64,
    pub prior: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepulsorSpec {
    pub channel: String,
    /// site component group holding the repelled point (default 0)
    #[serde(default)]
    pub group: usize,
    pub gain: f64,
    pub cutoff: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSection {
    pub channel: String,
    pub threshold: f64,
    pub attachment: String,
    pub after: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxSection {
    pub name: String,
    pub state: Vec<f64>,
    pub channel: String,
    pub precision: f64,
    pub models: Vec<IntentionSection>,
    pub head: HeadSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub horizon: usize,
    /// evidence sources (attachment or aux-unit names), planner head order
    pub sources: Vec<String>,
    pub d: Vec<f64>,
    /// per source: rows = outcomes, cols = states
    pub a: Vec<Vec<Vec<f64>>>,
    /// per action: rows/cols = states (column-stochastic)
    pub b: Vec<Vec<Vec<f64>>>,
    /// per source: 1 or `horizon` preference vectors over outcomes
    pub c: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggingSection {
    #[serde(default)]
    pub distances: Vec<DistanceSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceSection {
    pub name: String,
    pub a: [String; 2],
    pub b: [String; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssertionSection {
    pub name: String,
    pub kind: String,
    pub col: Option<String>,
    pub col_b: Option<String>,
    pub value: Option<f64>,
    pub tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub last_fraction: Option<f64>,
    pub agg: Option<String>,
    pub min: Option<f64>,
    pub above: Option<f64>,
    pub frac: Option<f64>,
    pub prefix: Option<String>,
    pub order: Option<Vec<usize>>,
    /// "deg" converts value and tol from degrees
    pub unit: Option<String>,
}

// ---------------------------------------------------------------------------
// loading

#[derive(Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
}

pub fn parse(text: &str) -> Result<Scenario> {
    let config: ScenarioConfig =
        toml::from_str(text).map_err(|e| Error::config(format!("scenario schema: {e}")))?;
    let s = Scenario { config };
    validate(&s)?;
    Ok(s)
}

pub fn load(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

const BUNDLED: &[(&str, &str)] = &[
    ("reaching_1dof", include_str!("../scenarios/reaching_1dof.toml")),
    ("tracking_1dof", include_str!("../scenarios/tracking_1dof.toml")),
    ("touch_then_track", include_str!("../scenarios/touch_then_track.toml")),
    ("reach_avoid_4dof", include_str!("../scenarios/reach_avoid_4dof.toml")),
    ("orientation_hold", include_str!("../scenarios/orientation_hold.toml")),
    ("multi_limb_tree", include_str!("../scenarios/multi_limb_tree.toml")),
    ("two_agents", include_str!("../scenarios/two_agents.toml")),
    ("dynamic_inference", include_str!("../scenarios/dynamic_inference.toml")),
    ("pick_and_place", include_str!("../scenarios/pick_and_place.toml")),
    ("tool_use", include_str!("../scenarios/tool_use.toml")),
    ("stress_23dof", include_str!("../scenarios/stress_23dof.toml")),
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled(name: &str) -> Result<Scenario> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::config(format!("no bundled scenario '{name}'")))?;
    parse(text)
}

/// Load a scenario by bundled name or by file path.
pub fn resolve(spec: &str) -> Result<Scenario> {
    if BUNDLED.iter().any(|(n, _)| *n == spec) {
        bundled(spec)
    } else {
        load(Path::new(spec))
    }
}

// ---------------------------------------------------------------------------
// validation (cross references, simplexes, per-kind required fields)

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    let sum: f64 = v.iter().sum();
    if v.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("{what} is not on the simplex (sum {sum})")));
    }
    Ok(())
}

fn validate(s: &Scenario) -> Result<()> {
    let cfg = &s.config;
    if cfg.run.dt <= 0.0 || cfg.run.ticks == 0 {
        return Err(Error::config("run.dt must be positive and run.ticks nonzero"));
    }
    let mut arm_names = Vec::new();
    for a in &cfg.world.arms {
        if arm_names.contains(&a.name.as_str()) {
            return Err(Error::config(format!("duplicate arm '{}'", a.name)));
        }
        arm_names.push(a.name.as_str());
        match a.kind.as_str() {
            "revolute" => {
                if a.lengths.is_empty() || a.lengths.len() != a.angles_deg.len() {
                    return Err(Error::config(format!(
                        "arm '{}' needs matching lengths and angles_deg",
                        a.name
                    )));
                }
            }
            "cartesian" => {
                if a.position.is_none() {
                    return Err(Error::config(format!(
                        "cartesian arm '{}' needs a position",
                        a.name
                    )));
                }
            }
            k => return Err(Error::config(format!("arm '{}': unknown kind '{k}'", a.name))),
        }
    }
    let mut object_names = Vec::new();
    for o in &cfg.world.objects {
        if object_names.contains(&o.name.as_str()) {
            return Err(Error::config(format!("duplicate object '{}'", o.name)));
        }
        object_names.push(o.name.as_str());
        if let Some(m) = &o.motion {
            match m.kind.as_str() {
                "static" => {}
                "linear" => {
                    m.velocity
                        .ok_or_else(|| Error::config(format!("object '{}': linear motion needs velocity", o.name)))?;
                }
                "circular" => {
                    if m.center.is_none() || m.omega.is_none() {
                        return Err(Error::config(format!(
                            "object '{}': circular motion needs center and omega",
                            o.name
                        )));
                    }
                }
                "scripted" => {
                    m.waypoints
                        .as_ref()
                        .ok_or_else(|| Error::config(format!("object '{}': scripted motion needs waypoints", o.name)))?;
                }
                k => {
                    return Err(Error::config(format!("object '{}': unknown motion '{k}'", o.name)))
                }
            }
        }
    }
    let mut channel_names = Vec::new();
    for ch in &cfg.world.channels {
        if channel_names.contains(&ch.name.as_str()) {
            return Err(Error::config(format!("duplicate channel '{}'", ch.name)));
        }
        channel_names.push(ch.name.as_str());
        let needs_arm = matches!(ch.kind.as_str(), "joint_angles" | "hand_pose" | "joint_pose" | "touch");
        let needs_object = matches!(ch.kind.as_str(), "object_position" | "object_angle");
        if !needs_arm && !needs_object {
            return Err(Error::config(format!("channel '{}': unknown kind '{}'", ch.name, ch.kind)));
        }
        if needs_arm {
            let arm = ch
                .arm
                .as_deref()
                .ok_or_else(|| Error::config(format!("channel '{}' needs an arm", ch.name)))?;
            if !arm_names.contains(&arm) {
                return Err(Error::config(format!("channel '{}': no arm '{arm}'", ch.name)));
            }
        }
        if needs_object {
            let obj = ch
                .object
                .as_deref()
                .ok_or_else(|| Error::config(format!("channel '{}' needs an object", ch.name)))?;
            if !object_names.contains(&obj) {
                return Err(Error::config(format!("channel '{}': no object '{obj}'", ch.name)));
            }
        }
        if ch.kind == "joint_pose" && ch.joint.is_none() {
            return Err(Error::config(format!("channel '{}' needs a joint index", ch.name)));
        }
    }
    for ev in &cfg.world.events {
        if ev.kind != "displace" {
            return Err(Error::config(format!("event on '{}': unknown kind '{}'", ev.object, ev.kind)));
        }
        if !object_names.contains(&ev.object.as_str()) {
            return Err(Error::config(format!("event references missing object '{}'", ev.object)));
        }
    }

    let channel_has = |name: &str| channel_names.contains(&name);
    let mut agent_names = Vec::new();
    for ag in &cfg.agents {
        if agent_names.contains(&ag.name.as_str()) {
            return Err(Error::config(format!("duplicate agent '{}'", ag.name)));
        }
        agent_names.push(ag.name.as_str());
        let kinds =
            ag.unit.is_some() as usize + ag.hybrid.is_some() as usize + ag.network.is_some() as usize;
        if kinds != 1 {
            return Err(Error::config(format!(
                "agent '{}' must define exactly one of unit, hybrid, network",
                ag.name
            )));
        }
        if let Some(arm) = &ag.arm {
            if !arm_names.contains(&arm.as_str()) {
                return Err(Error::config(format!("agent '{}': no arm '{arm}'", ag.name)));
            }
        }
        if ag.network.is_none() && (!ag.aux.is_empty() || !ag.switches.is_empty() || ag.planner.is_some()) {
            return Err(Error::config(format!(
                "agent '{}': aux units, switches and planners require a network",
                ag.name
            )));
        }
        for spec in ag
            .unit
            .iter()
            .flat_map(|u| u.channels.iter())
            .chain(ag.hybrid.iter().flat_map(|h| h.channels.iter()))
        {
            if !channel_has(&spec.channel) {
                return Err(Error::config(format!(
                    "agent '{}': no world channel '{}'",
                    ag.name, spec.channel
                )));
            }
        }
        if let Some(h) = &ag.hybrid {
            if h.models.is_empty() {
                return Err(Error::config(format!(
                    "agent '{}': a hybrid unit needs a non-empty intention bank",
                    ag.name
                )));
            }
            if h.head.precision.is_none() {
                return Err(Error::config(format!(
                    "agent '{}': a flat hybrid head needs a trajectory precision",
                    ag.name
                )));
            }
        }
        if let Some(net) = &ag.network {
            let mut module_names: Vec<&str> = Vec::new();
            for m in &net.modules {
                if module_names.contains(&m.name.as_str()) {
                    return Err(Error::config(format!("agent '{}': duplicate module '{}'", ag.name, m.name)));
                }
                if let Some(p) = &m.parent {
                    if !module_names.contains(&p.as_str()) {
                        return Err(Error::config(format!(
                            "agent '{}': module '{}' parent '{}' must be declared first",
                            ag.name, m.name, p
                        )));
                    }
                }
                module_names.push(m.name.as_str());
                if let Some(v) = &m.vision {
                    if !channel_has(&v.channel) {
                        return Err(Error::config(format!(
                            "agent '{}': no world channel '{}'",
                            ag.name, v.channel
                        )));
                    }
                }
            }
            if let Some(p) = &net.proprio {
                if !channel_has(&p.channel) {
                    return Err(Error::config(format!(
                        "agent '{}': no world channel '{}'",
                        ag.name, p.channel
                    )));
                }
            }
            let mut pathway_names: Vec<String> = vec!["self".into()];
            for pw in &net.pathways {
                if pathway_names.iter().any(|n| n == &pw.name) {
                    return Err(Error::config(format!("agent '{}': duplicate pathway '{}'", ag.name, pw.name)));
                }
                if !channel_has(&pw.channel) {
                    return Err(Error::config(format!("agent '{}': no world channel '{}'", ag.name, pw.channel)));
                }
                if let Some(m) = &pw.attach {
                    if !module_names.contains(&m.as_str()) {
                        return Err(Error::config(format!(
                            "agent '{}': pathway '{}' attaches to missing module '{m}'",
                            ag.name, pw.name
                        )));
                    }
                } else if pw.virtual_level.is_some() {
                    return Err(Error::config(format!(
                        "agent '{}': pathway '{}' cannot put a virtual level on a root entity",
                        ag.name, pw.name
                    )));
                }
                if let Some(v) = &pw.virtual_level {
                    if let Some(vs) = &v.vision {
                        if !channel_has(&vs.channel) {
                            return Err(Error::config(format!(
                                "agent '{}': no world channel '{}'",
                                ag.name, vs.channel
                            )));
                        }
                    }
                }
                pathway_names.push(pw.name.clone());
            }
            let mut attachment_names: Vec<&str> = Vec::new();
            for att in &net.attachments {
                if attachment_names.contains(&att.name.as_str()) {
                    return Err(Error::config(format!("agent '{}': duplicate attachment '{}'", ag.name, att.name)));
                }
                attachment_names.push(&att.name);
                if att.site.is_empty() {
                    return Err(Error::config(format!("attachment '{}' has an empty site", att.name)));
                }
                for sc in &att.site {
                    if !pathway_names.iter().any(|n| n == &sc.pathway) {
                        return Err(Error::config(format!(
                            "attachment '{}': no pathway '{}'",
                            att.name, sc.pathway
                        )));
                    }
                    let virtual_name = format!("{}.virtual", sc.pathway);
                    if !module_names.contains(&sc.module.as_str()) && sc.module != virtual_name {
                        return Err(Error::config(format!(
                            "attachment '{}': no module '{}'",
                            att.name, sc.module
                        )));
                    }
                    if sc.frame != "extr" && sc.frame != "intr" {
                        return Err(Error::config(format!(
                            "attachment '{}': frame must be extr or intr",
                            att.name
                        )));
                    }
                }
                match &att.head {
                    Some(head) => {
                        if att.intentions.is_empty() {
                            return Err(Error::config(format!(
                                "attachment '{}': a hybrid head needs a non-empty intention bank",
                                att.name
                            )));
                        }
                        if att.causes.is_some() {
                            return Err(Error::config(format!(
                                "attachment '{}': the head owns the causes; drop the causes field",
                                att.name
                            )));
                        }
                        if head.precision.is_some() {
                            return Err(Error::config(format!(
                                "attachment '{}': set the attachment precision, not head.precision",
                                att.name
                            )));
                        }
                        if let Some(prior) = &head.prior {
                            if prior.len() != att.intentions.len() {
                                return Err(Error::dims(
                                    format!("attachment '{}' head prior", att.name),
                                    prior.len(),
                                    att.intentions.len(),
                                ));
                            }
                            check_simplex(prior, &format!("attachment '{}' head prior", att.name))?;
                        }
                    }
                    None => {
                        if att.intentions.is_empty() {
                            return Err(Error::config(format!(
                                "attachment '{}' needs at least one intention",
                                att.name
                            )));
                        }
                        let causes = att.causes.as_ref().ok_or_else(|| {
                            Error::config(format!("attachment '{}' needs fixed causes", att.name))
                        })?;
                        if causes.len() != att.intentions.len() {
                            return Err(Error::dims(
                                format!("attachment '{}' causes", att.name),
                                causes.len(),
                                att.intentions.len(),
                            ));
                        }
                        check_simplex(causes, &format!("attachment '{}' causes", att.name))?;
                    }
                }
                for r in &att.repulsors {
                    if !channel_has(&r.channel) {
                        return Err(Error::config(format!(
                            "attachment '{}': no world channel '{}'",
                            att.name, r.channel
                        )));
                    }
                    if r.group >= att.site.len() {
                        return Err(Error::config(format!(
                            "attachment '{}': repulsor group {} out of range",
                            att.name, r.group
                        )));
                    }
                }
            }
            let mut aux_names: Vec<&str> = Vec::new();
            for aux in &ag.aux {
                if aux_names.contains(&aux.name.as_str()) || attachment_names.contains(&aux.name.as_str()) {
                    return Err(Error::config(format!("agent '{}': name clash on '{}'", ag.name, aux.name)));
                }
                aux_names.push(&aux.name);
                if aux.models.is_empty() {
                    return Err(Error::config(format!(
                        "aux unit '{}': a hybrid unit needs a non-empty intention bank",
                        aux.name
                    )));
                }
                if aux.head.precision.is_none() {
                    return Err(Error::config(format!(
                        "aux unit '{}' needs a head trajectory precision",
                        aux.name
                    )));
                }
                if !channel_has(&aux.channel) {
                    return Err(Error::config(format!("aux unit '{}': no world channel '{}'", aux.name, aux.channel)));
                }
            }
            for sw in &ag.switches {
                if !channel_has(&sw.channel) {
                    return Err(Error::config(format!("switch on '{}': no world channel '{}'", sw.attachment, sw.channel)));
                }
                let Some(att) = net.attachments.iter().find(|a| a.name == sw.attachment) else {
                    return Err(Error::config(format!("switch references missing attachment '{}'", sw.attachment)));
                };
                if att.head.is_some() {
                    return Err(Error::config(format!(
                        "switch on '{}': a head owns those causes",
                        sw.attachment
                    )));
                }
                if sw.after.len() != att.intentions.len() {
                    return Err(Error::dims(
                        format!("switch on '{}'", sw.attachment),
                        sw.after.len(),
                        att.intentions.len(),
                    ));
                }
                check_simplex(&sw.after, &format!("switch on '{}'", sw.attachment))?;
            }
            if let Some(pl) = &ag.planner {
                if pl.sources.is_empty() {
                    return Err(Error::config(format!("agent '{}': planner needs sources", ag.name)));
                }
                for src in &pl.sources {
                    let in_att = attachment_names.contains(&src.as_str());
                    let in_aux = aux_names.contains(&src.as_str());
                    if !in_att && !in_aux {
                        return Err(Error::config(format!(
                            "planner source '{src}' matches no attachment or aux unit"
                        )));
                    }
                    if in_att {
                        let att = net.attachments.iter().find(|a| a.name == *src).unwrap();
                        if att.head.is_none() {
                            return Err(Error::config(format!(
                                "planner source '{src}' has no hybrid head"
                            )));
                        }
                    }
                }
                if pl.a.len() != pl.sources.len() || pl.c.len() != pl.sources.len() {
                    return Err(Error::config(format!(
                        "agent '{}': planner needs one likelihood and one preference set per source",
                        ag.name
                    )));
                }
                check_simplex(&pl.d, &format!("agent '{}' planner initial prior", ag.name))?;
                let n = pl.d.len();
                for (i, m) in pl.a.iter().enumerate() {
                    for (col, _) in (0..n).enumerate() {
                        let sum: f64 = m.iter().map(|row| row[col]).sum();
                        if (sum - 1.0).abs() > 1e-9 {
                            return Err(Error::config(format!(
                                "planner likelihood {i} column {col} sums to {sum}, not 1"
                            )));
                        }
                    }
                }
            }
        }
    }
    for asrt in &cfg.assertions {
        let known = [
            "final_abs",
            "steady_abs",
            "steady_rel",
            "min_above",
            "ever",
            "ratio_drop",
            "dominates_after",
            "stage_order",
        ];
        if !known.contains(&asrt.kind.as_str()) {
            return Err(Error::config(format!("assertion '{}': unknown kind '{}'", asrt.name, asrt.kind)));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// construction

struct BuiltAgent {
    name: String,
    agent: Agent,
    arm: Option<usize>,
    joints: Vec<usize>,
}

struct Built {
    world: World,
    channels: Vec<ObsChannel>,
    agents: Vec<BuiltAgent>,
    /// per agent: proprio channel to scatter into per-module scalars
    splits: Vec<Option<(String, Vec<usize>, Vec<String>)>>,
}

fn arm_root(a: &ArmSection) -> ExtrinsicState {
    ExtrinsicState::new(a.root[0], a.root[1], deg(a.root[2]))
}

fn build_motion(o: &ObjectSection) -> Result<MotionLaw> {
    let Some(m) = &o.motion else { return Ok(MotionLaw::Static) };
    Ok(match m.kind.as_str() {
        "static" => MotionLaw::Static,
        "linear" => {
            let v = m.velocity.unwrap();
            MotionLaw::Linear { velocity: Vector2::new(v[0], v[1]) }
        }
        "circular" => {
            let c = m.center.unwrap();
            let center = Vector2::new(c[0], c[1]);
            let d = Vector2::new(o.position[0], o.position[1]) - center;
            MotionLaw::Circular {
                center,
                radius: d.norm(),
                omega: m.omega.unwrap(),
                phase: d.y.atan2(d.x),
            }
        }
        "scripted" => MotionLaw::Scripted {
            waypoints: m
                .waypoints
                .as_ref()
                .unwrap()
                .iter()
                .map(|w| (w[0], Vector2::new(w[1], w[2])))
                .collect(),
        },
        _ => unreachable!("validated"),
    })
}

fn build_world(cfg: &ScenarioConfig, seed: u64) -> Result<(World, Vec<ObsChannel>)> {
    let noise = match &cfg.world.noise {
        None => NoiseConfig::default(),
        Some(n) if n.silent => NoiseConfig::silent(),
        Some(n) => {
            let d = NoiseConfig::default();
            NoiseConfig {
                proprio: n.proprio.unwrap_or(d.proprio),
                vision: n.vision.unwrap_or(d.vision),
                touch: n.touch.unwrap_or(d.touch),
            }
        }
    };
    let mut world = World::new(cfg.run.dt, seed, noise)?;
    let mut arm_ids = HashMap::new();
    for a in &cfg.world.arms {
        let id = match a.kind.as_str() {
            "cartesian" => {
                let p = a.position.unwrap();
                world.add_cartesian_arm(Vector2::new(p[0], p[1]))
            }
            _ => {
                let angles = degs(&a.angles_deg);
                let id = match &a.parents {
                    None => world.add_revolute_arm(arm_root(a), &a.lengths, &angles)?,
                    Some(parents) => {
                        let parents: Vec<Option<usize>> = parents
                            .iter()
                            .map(|&p| if p < 0 { None } else { Some(p as usize) })
                            .collect();
                        let effector = a.effector.unwrap_or(a.lengths.len() - 1);
                        world.add_revolute_tree(arm_root(a), &a.lengths, &angles, &parents, effector)?
                    }
                };
                if let Some(g) = &a.gripper {
                    world.arms[id].gripper = Some(Gripper {
                        joints: g.joints.iter().map(|&(j, c)| (j, deg(c))).collect(),
                        grasp_threshold: g.grasp_threshold,
                        release_threshold: g.release_threshold,
                    });
                }
                id
            }
        };
        arm_ids.insert(a.name.clone(), id);
    }
    for o in &cfg.world.objects {
        world.add_object(&o.name, Vector2::new(o.position[0], o.position[1]), o.radius, build_motion(o)?)?;
    }
    let mut channels = Vec::new();
    for ch in &cfg.world.channels {
        let arm = |name: &Option<String>| arm_ids[name.as_ref().unwrap()];
        let source = match ch.kind.as_str() {
            "joint_angles" => ChannelSource::JointAngles { arm: arm(&ch.arm) },
            "hand_pose" => ChannelSource::HandPose {
                arm: arm(&ch.arm),
                comps: ch.comps.clone().unwrap_or_else(default_xy),
            },
            "joint_pose" => ChannelSource::JointPose {
                arm: arm(&ch.arm),
                joint: ch.joint.unwrap(),
                comps: ch.comps.clone().unwrap_or_else(default_xy),
            },
            "object_position" => ChannelSource::ObjectPosition { object: ch.object.clone().unwrap() },
            "object_angle" => ChannelSource::ObjectAngle { object: ch.object.clone().unwrap() },
            "touch" => ChannelSource::Touch { arm: arm(&ch.arm) },
            _ => unreachable!("validated"),
        };
        channels.push(ObsChannel::new(&ch.name, source));
    }
    Ok((world, channels))
}

fn state_init(values: &Option<Vec<f64>>, values_deg: &Option<Vec<f64>>, what: &str) -> Result<Vec<f64>> {
    match (values, values_deg) {
        (Some(v), None) => Ok(v.clone()),
        (None, Some(v)) => Ok(degs(v)),
        (None, None) => Err(Error::config(format!("{what}: state or state_deg required"))),
        (Some(_), Some(_)) => Err(Error::config(format!("{what}: give state or state_deg, not both"))),
    }
}

fn intention_values(sec: &IntentionSection, dim: usize) -> Result<DVector<f64>> {
    let vals = match (&sec.values, &sec.values_deg) {
        (Some(v), None) => v.clone(),
        (None, Some(v)) => degs(v),
        _ => {
            return Err(Error::config(format!(
                "intention '{}': point needs values or values_deg",
                sec.name
            )))
        }
    };
    if vals.len() != dim {
        return Err(Error::dims(format!("intention '{}' values", sec.name), vals.len(), dim));
    }
    Ok(DVector::from_vec(vals))
}

/// Build one intention over a site laid out as `groups` component ranges.
fn build_intention(sec: &IntentionSection, groups: &[(usize, usize)], dim: usize) -> Result<Intention> {
    match sec.kind.as_str() {
        "stay" => Ok(Intention::stay(&sec.name, dim)),
        "point" => Intention::new(&sec.name, DMatrix::zeros(dim, dim), intention_values(sec, dim)?),
        "follow" => {
            let pairs = sec
                .pairs
                .as_ref()
                .ok_or_else(|| Error::config(format!("intention '{}': follow needs pairs", sec.name)))?;
            let mut w = DMatrix::identity(dim, dim);
            for &[dst, src] in pairs {
                if dst >= groups.len() || src >= groups.len() {
                    return Err(Error::config(format!(
                        "intention '{}': follow pair out of range",
                        sec.name
                    )));
                }
                let (d0, dl) = groups[dst];
                let (s0, sl) = groups[src];
                if dl != sl {
                    return Err(Error::dims(format!("intention '{}' follow groups", sec.name), dl, sl));
                }
                for k in 0..dl {
                    for c in 0..dim {
                        w[(d0 + k, c)] = 0.0;
                    }
                    w[(d0 + k, s0 + k)] = 1.0;
                }
            }
            Intention::new(&sec.name, w, DVector::zeros(dim))
        }
        "linear" => {
            let rows = sec
                .weights
                .as_ref()
                .ok_or_else(|| Error::config(format!("intention '{}': linear needs weights", sec.name)))?;
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(Error::dims(format!("intention '{}' weights", sec.name), rows.len(), dim));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let bias = match &sec.bias {
                Some(b) if b.len() == dim => DVector::from_vec(b.clone()),
                Some(b) => return Err(Error::dims(format!("intention '{}' bias", sec.name), b.len(), dim)),
                None => DVector::zeros(dim),
            };
            Intention::new(&sec.name, DMatrix::from_row_slice(dim, dim, &flat), bias)
        }
        k => Err(Error::config(format!("intention '{}': unknown kind '{k}'", sec.name))),
    }
}

fn build_head(
    sec: &HeadSection,
    models: Vec<ReducedModel>,
    full_precision: Precision,
    dim: usize,
) -> Result<HybridHead> {
    let n = models.len();
    let prior = match &sec.prior {
        Some(p) => {
            check_simplex(p, "head prior")?;
            DVector::from_vec(p.clone())
        }
        None => DVector::from_element(n, 1.0 / n as f64),
    };
    HybridHead::new(
        models,
        full_precision,
        Precision::uniform(dim, sec.posterior_precision),
        prior,
        sec.window,
    )
}

fn build_flat_channel(
    spec: &ChannelSpec,
    state_dim: usize,
    cause_dim: usize,
    default_root: ExtrinsicState,
) -> Result<Channel> {
    let root = spec
        .root
        .map(|r| ExtrinsicState::new(r[0], r[1], deg(r[2])))
        .unwrap_or(default_root);
    let map: Box<dyn crate::unit::LikelihoodMap> = match spec.kind.as_str() {
        "state" => Box::new(SelectState {
            indices: spec.indices.clone().unwrap_or_else(|| (0..state_dim).collect()),
            state_dim,
            cause_dim,
        }),
        "cause" => Box::new(SelectCause {
            indices: spec.indices.clone().unwrap_or_else(|| (0..cause_dim).collect()),
            state_dim,
            cause_dim,
        }),
        "hand" => Box::new(HandFk {
            lengths: spec
                .lengths
                .clone()
                .ok_or_else(|| Error::config("hand channel needs lengths"))?,
            root,
            block_start: 0,
            state_dim,
            cause_dim,
        }),
        "hand_and_cause" => Box::new(HandFkAndCause {
            lengths: spec
                .lengths
                .clone()
                .ok_or_else(|| Error::config("hand_and_cause channel needs lengths"))?,
            root,
        }),
        k => return Err(Error::config(format!("channel '{}': unknown map '{k}'", spec.channel))),
    };
    let dim = map.obs_dim();
    Ok(Channel { name: spec.channel.clone(), map, precision: Precision::uniform(dim, spec.precision) })
}

fn build_flat_dynamics(
    spec: &DynSpec,
    state_dim: usize,
    cause_dim: usize,
    default_root: ExtrinsicState,
) -> Result<DynamicsTerm> {
    let root = spec
        .root
        .map(|r| ExtrinsicState::new(r[0], r[1], deg(r[2])))
        .unwrap_or(default_root);
    let map: Box<dyn crate::unit::DynamicsMap> = match spec.kind.as_str() {
        "point" => {
            let rho = match (&spec.values, &spec.values_deg) {
                (Some(v), None) => v.clone(),
                (None, Some(v)) => degs(v),
                _ => return Err(Error::config("point dynamics need values or values_deg")),
            };
            if rho.len() != state_dim {
                return Err(Error::dims("point dynamics", rho.len(), state_dim));
            }
            Box::new(PointAttractor { rho: DVector::from_vec(rho), cause_dim })
        }
        "cause_target" => Box::new(CauseAttractor),
        "jt_reach" => Box::new(JacobianTransposeReach {
            lengths: spec
                .lengths
                .clone()
                .ok_or_else(|| Error::config("jt_reach dynamics need lengths"))?,
            root,
            gain: spec.gain.unwrap_or(1.0),
        }),
        k => return Err(Error::config(format!("unknown dynamics kind '{k}'"))),
    };
    Ok(DynamicsTerm { map, precision: Precision::uniform(state_dim, spec.precision) })
}

fn build_prior(spec: &PriorSpec, dim: usize, what: &str) -> Result<PriorTerm> {
    let mean = state_init(&spec.mean, &spec.mean_deg, what)?;
    if mean.len() != dim {
        return Err(Error::dims(what.to_string(), mean.len(), dim));
    }
    Ok(PriorTerm { mean: DVector::from_vec(mean), precision: Precision::uniform(dim, spec.precision) })
}

fn build_unit_agent(
    ag: &AgentSection,
    sec: &UnitSection,
    arm: Option<usize>,
    root: ExtrinsicState,
) -> Result<(UnitAgent, usize)> {
    let state = state_init(&sec.state, &sec.state_deg, &format!("agent '{}'", ag.name))?;
    let state_dim = state.len();
    let cause_dim = sec.causes.len();
    let mut channels = Vec::new();
    let mut names = Vec::new();
    for spec in &sec.channels {
        channels.push(build_flat_channel(spec, state_dim, cause_dim, root)?);
        names.push(Some(spec.channel.clone()));
    }
    let dynamics = sec
        .dynamics
        .as_ref()
        .map(|d| build_flat_dynamics(d, state_dim, cause_dim, root))
        .transpose()?;
    let action = match sec.action {
        Some(ch) if ch >= channels.len() => {
            return Err(Error::config(format!("agent '{}': action channel {ch} out of range", ag.name)))
        }
        Some(ch) => Some(ActionCoupling { channel: ch }),
        None => None,
    };
    let action_dim = action
        .as_ref()
        .map(|a| channels[a.channel].map.obs_dim())
        .unwrap_or(0);
    let eta_x = sec
        .prior_x
        .as_ref()
        .map(|p| build_prior(p, state_dim, "prior_x"))
        .transpose()?;
    let eta_v = sec
        .prior_v
        .as_ref()
        .map(|p| build_prior(p, cause_dim, "prior_v"))
        .transpose()?;
    let unit = ContinuousUnit {
        x: GeneralizedBelief::new(DVector::from_vec(state), DVector::zeros(state_dim))?,
        v: DVector::from_vec(sec.causes.clone()),
        eta_x,
        eta_v,
        channels,
        dynamics,
        action,
    };
    Ok((
        UnitAgent { unit, channels: names, arm, velocity: DVector::zeros(action_dim) },
        action_dim,
    ))
}

fn build_hybrid_agent(
    ag: &AgentSection,
    sec: &HybridSection,
    arm: Option<usize>,
    root: ExtrinsicState,
) -> Result<(HybridAgent, usize)> {
    let state = state_init(&sec.state, &sec.state_deg, &format!("agent '{}'", ag.name))?;
    let state_dim = state.len();
    let cause_dim = sec.models.len();
    let mut channels = Vec::new();
    let mut names = Vec::new();
    for spec in &sec.channels {
        channels.push(build_flat_channel(spec, state_dim, cause_dim, root)?);
        names.push(Some(spec.channel.clone()));
    }
    let full = sec.head.precision.expect("validated");
    let groups: Vec<(usize, usize)> = vec![(0, state_dim)];
    let models = sec
        .models
        .iter()
        .map(|m| {
            Ok(ReducedModel {
                intention: build_intention(m, &groups, state_dim)?,
                precision: Precision::uniform(state_dim, m.precision.unwrap_or(full)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let head = build_head(&sec.head, models, Precision::uniform(state_dim, full), state_dim)?;
    let action = match sec.action {
        Some(ch) if ch >= channels.len() => {
            return Err(Error::config(format!("agent '{}': action channel {ch} out of range", ag.name)))
        }
        Some(ch) => Some(ActionCoupling { channel: ch }),
        None => None,
    };
    let action_dim = action
        .as_ref()
        .map(|a| channels[a.channel].map.obs_dim())
        .unwrap_or(0);
    let x = GeneralizedBelief::new(DVector::from_vec(state), DVector::zeros(state_dim))?;
    let unit = HybridUnit::new(x, channels, None, action, head)?;
    Ok((
        HybridAgent { unit, channels: names, arm, velocity: DVector::zeros(action_dim) },
        action_dim,
    ))
}

fn build_network_agent(
    ag: &AgentSection,
    sec: &NetworkSection,
    arm: Option<usize>,
    default_root: ExtrinsicState,
) -> Result<(NetworkAgent, Option<(String, Vec<usize>, Vec<String>)>, usize)> {
    let root = sec
        .root
        .map(|r| ExtrinsicState::new(r[0], r[1], deg(r[2])))
        .unwrap_or(default_root);
    let module_idx: HashMap<&str, usize> =
        sec.modules.iter().enumerate().map(|(i, m)| (m.name.as_str(), i)).collect();
    let specs: Vec<ModuleSpec> = sec
        .modules
        .iter()
        .map(|m| ModuleSpec {
            name: m.name.clone(),
            parent: m.parent.as_ref().map(|p| module_idx[p.as_str()]),
            length: m.length,
            angle: deg(m.angle_deg),
        })
        .collect();
    let pi_oe = Precision::uniform(3, sec.pi_extr);
    let mut net = IeNetwork::new(root, &specs, &pi_oe, sec.pi_proprio)?;
    for (i, m) in sec.modules.iter().enumerate() {
        if let Some(v) = &m.vision {
            net.add_vision(
                i,
                SELF_PATHWAY,
                VisionChannel {
                    name: v.channel.clone(),
                    comps: v.comps.clone(),
                    precision: Precision::uniform(v.comps.len(), v.precision),
                },
            );
        }
    }
    for pw in &sec.pathways {
        let attach = pw.attach.as_ref().map(|m| module_idx[m.as_str()]);
        let vis = VisionChannel {
            name: pw.channel.clone(),
            comps: pw.comps.clone(),
            precision: Precision::uniform(pw.comps.len(), pw.precision),
        };
        let p = net.attach_entity_pathway(
            &pw.name,
            attach,
            vis,
            &Precision::uniform(3, pw.pi_extr.unwrap_or(sec.pi_extr)),
        )?;
        if let Some(w) = pw.length_prior {
            let path = net.pathways[p].path.clone();
            for m in path {
                let block = net.block_mut(m, p);
                block.intr_prior = Some(PriorTerm {
                    mean: block.intr.mu.clone(),
                    precision: Precision::Diagonal(DVector::from_vec(vec![0.0, w])),
                });
            }
        }
        if let Some(v) = &pw.virtual_level {
            let init = IntrinsicState::new(deg(v.angle_deg), v.length);
            let vm = net.attach_virtual_level(
                p,
                init,
                &Precision::uniform(3, pw.pi_extr.unwrap_or(sec.pi_extr)),
            )?;
            if let Some(vs) = &v.vision {
                net.add_vision(
                    vm,
                    p,
                    VisionChannel {
                        name: vs.channel.clone(),
                        comps: vs.comps.clone(),
                        precision: Precision::uniform(vs.comps.len(), vs.precision),
                    },
                );
            }
            if let Some(weights) = &v.prior {
                if weights.len() != 2 {
                    return Err(Error::config(format!(
                        "pathway '{}': virtual prior needs [angle_weight, length_weight]",
                        pw.name
                    )));
                }
                let block = net.block_mut(vm, p);
                block.intr_prior = Some(PriorTerm {
                    mean: block.intr.mu.clone(),
                    precision: Precision::Diagonal(DVector::from_vec(weights.clone())),
                });
            }
        }
    }
    for att in &sec.attachments {
        let mut components = Vec::new();
        let mut groups = Vec::new();
        let mut offset = 0;
        for sc in &att.site {
            let pathway = net
                .pathway_id(&sc.pathway)
                .ok_or_else(|| Error::config(format!("no pathway '{}'", sc.pathway)))?;
            let module = net
                .module_id(&sc.module)
                .ok_or_else(|| Error::config(format!("no module '{}'", sc.module)))?;
            let frame = if sc.frame == "intr" { Frame::Intrinsic } else { Frame::Extrinsic };
            groups.push((offset, sc.comps.len()));
            offset += sc.comps.len();
            components.push(SiteComponent { module, pathway, frame, comps: sc.comps.clone() });
        }
        let dim = offset;
        let repulsors = att
            .repulsors
            .iter()
            .map(|r| Repulsor {
                offset: groups[r.group].0,
                obstacle: r.channel.clone(),
                gain: r.gain,
                cutoff: r.cutoff,
            })
            .collect();
        let (intentions, causes, head) = match &att.head {
            Some(h) => {
                let models = att
                    .intentions
                    .iter()
                    .map(|m| {
                        Ok(ReducedModel {
                            intention: build_intention(m, &groups, dim)?,
                            precision: Precision::uniform(dim, m.precision.unwrap_or(att.precision)),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let head = build_head(h, models, Precision::uniform(dim, att.precision), dim)?;
                (Vec::new(), DVector::zeros(0), Some(head))
            }
            None => {
                let intentions = att
                    .intentions
                    .iter()
                    .map(|m| build_intention(m, &groups, dim))
                    .collect::<Result<Vec<_>>>()?;
                let causes = DVector::from_vec(att.causes.clone().expect("validated"));
                (intentions, causes, None)
            }
        };
        net.add_attachment(DynamicsAttachment {
            name: att.name.clone(),
            site: Site { components },
            intentions,
            causes,
            head,
            repulsors,
            precision: Precision::uniform(dim, att.precision),
        })?;
    }

    let dof = net.self_module_count();
    let mut agent = NetworkAgent::new(net, arm);
    for aux in &ag.aux {
        let n = aux.state.len();
        let full = aux.head.precision.expect("validated");
        let groups = vec![(0, n)];
        let models = aux
            .models
            .iter()
            .map(|m| {
                Ok(ReducedModel {
                    intention: build_intention(m, &groups, n)?,
                    precision: Precision::uniform(n, m.precision.unwrap_or(full)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = build_head(&aux.head, models, Precision::uniform(n, full), n)?;
        let channels = vec![Channel {
            name: aux.channel.clone(),
            map: Box::new(SelectState {
                indices: (0..n).collect(),
                state_dim: n,
                cause_dim: aux.models.len(),
            }),
            precision: Precision::uniform(n, aux.precision),
        }];
        let x = GeneralizedBelief::new(DVector::from_vec(aux.state.clone()), DVector::zeros(n))?;
        let unit = HybridUnit::new(x, channels, None, None, head)?;
        agent.aux.push(AuxUnit {
            name: aux.name.clone(),
            unit,
            channels: vec![Some(aux.channel.clone())],
        });
    }
    for sw in &ag.switches {
        agent.switches.push(CauseSwitch {
            channel: sw.channel.clone(),
            threshold: sw.threshold,
            attachment: sw.attachment.clone(),
            after: DVector::from_vec(sw.after.clone()),
            fired: false,
        });
    }
    if let Some(pl) = &ag.planner {
        let to_matrix = |rows: &Vec<Vec<f64>>, what: &str| -> Result<DMatrix<f64>> {
            let r = rows.len();
            let c = rows.first().map(|x| x.len()).unwrap_or(0);
            if r == 0 || rows.iter().any(|row| row.len() != c) {
                return Err(Error::config(format!("{what}: ragged or empty matrix")));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            Ok(DMatrix::from_row_slice(r, c, &flat))
        };
        let a = pl
            .a
            .iter()
            .map(|m| to_matrix(m, "planner likelihood"))
            .collect::<Result<Vec<_>>>()?;
        let b = pl
            .b
            .iter()
            .map(|m| to_matrix(m, "planner transition"))
            .collect::<Result<Vec<_>>>()?;
        let c = pl
            .c
            .iter()
            .map(|per_head| per_head.iter().map(|v| DVector::from_vec(v.clone())).collect())
            .collect();
        let model = DiscreteModel::new(a, b, c, DVector::from_vec(pl.d.clone()), pl.horizon)?;
        let sources = pl
            .sources
            .iter()
            .map(|src| {
                if let Some(i) = ag.aux.iter().position(|x| &x.name == src) {
                    EvidenceSource::Aux(i)
                } else {
                    EvidenceSource::Attachment(src.clone())
                }
            })
            .collect();
        agent.bind_planner(PlannerBinding { planner: Planner::new(model)?, sources })?;
    }
    let split = sec.proprio.as_ref().map(|p| {
        let joints = p.joints.clone().unwrap_or_else(|| (0..dof).collect());
        let names = (0..dof)
            .map(|m| format!("proprio.{}", sec.modules[m].name))
            .collect();
        (p.channel.clone(), joints, names)
    });
    if let Some((_, joints, _)) = &split {
        if joints.len() != dof {
            return Err(Error::dims(
                format!("agent '{}' proprio joints", ag.name),
                joints.len(),
                dof,
            ));
        }
    }
    Ok((agent, split, dof))
}

fn build(cfg: &ScenarioConfig, seed: u64) -> Result<Built> {
    let (world, channels) = build_world(cfg, seed)?;
    let mut agents = Vec::new();
    let mut splits = Vec::new();
    for ag in &cfg.agents {
        let arm = ag.arm.as_ref().map(|name| {
            cfg.world.arms.iter().position(|a| &a.name == name).expect("validated")
        });
        let root = arm
            .map(|i| arm_root(&cfg.world.arms[i]))
            .unwrap_or_else(ExtrinsicState::origin);
        let (agent, split, dof) = match (&ag.unit, &ag.hybrid, &ag.network) {
            (Some(u), None, None) => {
                let (a, dof) = build_unit_agent(ag, u, arm, root)?;
                (Agent::Unit(a), None, dof)
            }
            (None, Some(h), None) => {
                let (a, dof) = build_hybrid_agent(ag, h, arm, root)?;
                (Agent::Hybrid(a), None, dof)
            }
            (None, None, Some(n)) => {
                let (a, split, dof) = build_network_agent(ag, n, arm, root)?;
                (Agent::Network(a), split, dof)
            }
            _ => unreachable!("validated"),
        };
        let joints = match &ag.joints {
            Some(j) => j.clone(),
            None => (0..dof).collect(),
        };
        if let Some(i) = arm {
            if dof != joints.len() {
                return Err(Error::dims(format!("agent '{}' joints", ag.name), joints.len(), dof));
            }
            let arm_dof = world.arms[i].angles.len();
            if let Some(&bad) = joints.iter().find(|&&j| j >= arm_dof) {
                return Err(Error::config(format!(
                    "agent '{}': joint {bad} out of range for its arm",
                    ag.name
                )));
            }
        }
        agents.push(BuiltAgent { name: ag.name.clone(), agent, arm, joints });
        splits.push(split);
    }
    Ok(Built { world, channels, agents, splits })
}

// ---------------------------------------------------------------------------
// running

pub struct RunLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl RunLog {
    fn new(columns: Vec<String>) -> Self {
        let index = columns.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        RunLog { columns, rows: Vec::new(), index }
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| {
            Error::config(format!(
                "unknown column '{name}'; available: {}",
                self.columns.join(", ")
            ))
        })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.index_of(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    /// CSV with a schema comment line, then a header row, then one row per
    /// tick. Floats use shortest-roundtrip formatting so replays are
    /// byte-identical.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * self.columns.len() * 8);
        out.push_str(CSV_SCHEMA_LINE);
        out.push('\n');
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Parse a CSV produced by `RunLog::to_csv`.
pub fn parse_csv(text: &str) -> Result<RunLog> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| Error::config("empty CSV"))?;
    if first != CSV_SCHEMA_LINE {
        return Err(Error::config(format!(
            "unsupported CSV schema line '{first}' (expected '{CSV_SCHEMA_LINE}')"
        )));
    }
    let header = lines.next().ok_or_else(|| Error::config("CSV has no header row"))?;
    let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
    let mut log = RunLog::new(columns);
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::config(format!("CSV row {}: bad number '{s}'", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != log.columns.len() {
            return Err(Error::dims(format!("CSV row {}", i + 1), row.len(), log.columns.len()));
        }
        log.rows.push(row);
    }
    if log.rows.is_empty() {
        return Err(Error::config("CSV has no data rows"));
    }
    Ok(log)
}

#[derive(Debug, Clone, Serialize)]
pub struct AssertionResult {
    pub name: String,
    pub kind: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub dt: f64,
    pub ticks: usize,
    pub passed: bool,
    pub assertions: Vec<AssertionResult>,
}

pub struct RunOutput {
    pub log: RunLog,
    pub summary: Summary,
}

pub fn simulate(s: &Scenario, seed_override: Option<u64>) -> Result<RunOutput> {
    let cfg = &s.config;
    let seed = seed_override.unwrap_or(cfg.run.seed);
    let mut built = build(cfg, seed)?;
    let dt = cfg.run.dt;
    let n_arms = built.world.arms.len();

    let mut columns: Vec<String> = Vec::new();
    let mut dist_idx: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(cfg.run.ticks);

    for tick in 0..cfg.run.ticks as u64 {
        for ev in &cfg.world.events {
            if ev.tick == tick {
                built
                    .world
                    .displace_object(&ev.object, Vector2::new(ev.position[0], ev.position[1]))?;
            }
        }
        let bundle = built.world.observe(&built.channels)?;

        let mut pairs: Vec<(String, f64)> = Vec::new();
        pairs.push(("tick".into(), tick as f64));
        pairs.push(("t".into(), tick as f64 * dt));
        for (ai, a) in cfg.world.arms.iter().enumerate() {
            let arm = &built.world.arms[ai];
            for (j, q) in arm.angles.iter().enumerate() {
                pairs.push((format!("w.{}.q{j}", a.name), *q));
            }
            let hand = arm.poses()[arm.effector];
            pairs.push((format!("w.{}.hand.x", a.name), hand.position.x));
            pairs.push((format!("w.{}.hand.y", a.name), hand.position.y));
            pairs.push((format!("w.{}.hand.o", a.name), hand.orientation));
            if arm.gripper.is_some() {
                pairs.push((format!("w.{}.closure", a.name), arm.closure()));
            }
        }
        for (oi, o) in cfg.world.objects.iter().enumerate() {
            let obj = &built.world.objects[oi];
            pairs.push((format!("w.{}.x", o.name), obj.position.x));
            pairs.push((format!("w.{}.y", o.name), obj.position.y));
            pairs.push((format!("w.{}.held", o.name), obj.carried_by.is_some() as u8 as f64));
        }
        for (ai, a) in cfg.world.arms.iter().enumerate() {
            for (oi, o) in cfg.world.objects.iter().enumerate() {
                pairs.push((
                    format!("w.touch.{}.{}", a.name, o.name),
                    built.world.touch[ai][oi] as u8 as f64,
                ));
            }
        }

        let mut world_actions: Vec<DVector<f64>> =
            (0..n_arms).map(|i| DVector::zeros(built.world.arms[i].angles.len())).collect();
        for (agent, split) in built.agents.iter_mut().zip(&built.splits) {
            let mut own = ObsBundle::new();
            for (name, value) in bundle.iter() {
                own.insert(name.clone(), value.clone());
            }
            if let Some((channel, joints, names)) = split {
                let v = bundle
                    .get(channel)
                    .ok_or_else(|| Error::config(format!("missing proprio channel '{channel}'")))?;
                for (j, name) in joints.iter().zip(names) {
                    own.insert(name.clone(), DVector::from_vec(vec![v[*j]]));
                }
            }
            let step = agent.agent.tick(&own, dt).map_err(|e| match e {
                Error::NonFinite { path, .. } => Error::NonFinite { tick, path },
                e => e,
            })?;
            if let (Some(arm), Some(action)) = (agent.arm, &step.action) {
                for (k, &j) in agent.joints.iter().enumerate() {
                    world_actions[arm][j] = action[k];
                }
            }
            for (name, value) in step.log {
                pairs.push((format!("a.{}.{name}", agent.name), value));
            }
        }

        if tick == 0 {
            columns = pairs.iter().map(|(n, _)| n.clone()).collect();
            {
                let index: HashMap<&str, usize> =
                    columns.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
                let lookup = |name: &str| -> Result<usize> {
                    index.get(name).copied().ok_or_else(|| {
                        Error::config(format!(
                            "distance references unknown column '{name}'; available: {}",
                            columns.join(", ")
                        ))
                    })
                };
                for d in &cfg.logging.distances {
                    dist_idx.push((
                        lookup(&d.a[0])?,
                        lookup(&d.a[1])?,
                        lookup(&d.b[0])?,
                        lookup(&d.b[1])?,
                    ));
                }
            }
            for d in &cfg.logging.distances {
                columns.push(format!("d.{}", d.name));
            }
        }
        let mut row: Vec<f64> = pairs.into_iter().map(|(_, v)| v).collect();
        for &(ax, ay, bx, by) in &dist_idx {
            let dx = row[ax] - row[bx];
            let dy = row[ay] - row[by];
            row.push((dx * dx + dy * dy).sqrt());
        }
        if row.len() != columns.len() {
            return Err(Error::dims("log row", row.len(), columns.len()));
        }
        rows.push(row);

        built.world.step(&world_actions)?;
    }

    let mut log = RunLog::new(columns);
    log.rows = rows;
    let assertions = evaluate_assertions(cfg, &log)?;
    let passed = assertions.iter().all(|a| a.passed);
    Ok(RunOutput {
        log,
        summary: Summary {
            scenario: cfg.name.clone(),
            seed,
            dt,
            ticks: cfg.run.ticks,
            passed,
            assertions,
        },
    })
}

// ---------------------------------------------------------------------------
// assertions

fn agg_values(values: &[f64], agg: &str) -> f64 {
    match agg {
        "max" => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        _ => values.iter().sum::<f64>() / values.len() as f64,
    }
}

fn tail<'a>(v: &'a [f64], fraction: f64) -> &'a [f64] {
    let n = ((v.len() as f64 * fraction).ceil() as usize).clamp(1, v.len());
    &v[v.len() - n..]
}

fn evaluate_assertions(cfg: &ScenarioConfig, log: &RunLog) -> Result<Vec<AssertionResult>> {
    let mut out = Vec::new();
    for a in &cfg.assertions {
        let scale = if a.unit.as_deref() == Some("deg") { std::f64::consts::PI / 180.0 } else { 1.0 };
        let need_col = || -> Result<Vec<f64>> {
            log.column(a.col.as_deref().ok_or_else(|| {
                Error::config(format!("assertion '{}' needs a col", a.name))
            })?)
        };
        let result = match a.kind.as_str() {
            "final_abs" => {
                let col = need_col()?;
                let target = match &a.col_b {
                    Some(b) => *log.column(b)?.last().unwrap(),
                    None => a.value.unwrap_or(0.0) * scale,
                };
                let tol = a.tol.ok_or_else(|| Error::config(format!("assertion '{}' needs tol", a.name)))? * scale;
                let measured = (col.last().unwrap() - target).abs();
                AssertionResult {
                    name: a.name.clone(),
                    kind: a.kind.clone(),
                    passed: measured < tol,
                    measured,
                    threshold: tol,
                    detail: format!("|final - target| where target = {target}"),
                }
            }
            "steady_abs" => {
                let col = need_col()?;
                let frac = a.last_fraction.unwrap_or(0.25);
                let tol = a.tol.ok_or_else(|| Error::config(format!("assertion '{}' needs tol", a.name)))? * scale;
                let diffs: Vec<f64> = match &a.col_b {
                    Some(b) => {
                        let other = log.column(b)?;
                        col.iter().zip(&other).map(|(x, y)| (x - y).abs()).collect()
                    }
                    None => {
                        let target = a.value.unwrap_or(0.0) * scale;
                        col.iter().map(|x| (x - target).abs()).collect()
                    }
                };
                let agg = a.agg.as_deref().unwrap_or("mean");
                let measured = agg_values(tail(&diffs, frac), agg);
                AssertionResult {
                    name: a.name.clone(),
                    kind: a.kind.clone(),
                    passed: measured < tol,
                    measured,
                    threshold: tol,
                    detail: format!("{agg} |error| over last {frac} of the run"),
                }
            }
            "steady_rel" => {
                let col = need_col()?;
                let value = a.value.ok_or_else(|| Error::config(format!("assertion '{}' needs value", a.name)))?;
                let rel = a.rel_tol.ok_or_else(|| Error::config(format!("assertion '{}' needs rel_tol", a.name)))?;
                let frac = a.last_fraction.unwrap_or(0.25);
                let diffs: Vec<f64> = col.iter().map(|x| (x - value).abs() / value.abs()).collect();
                let agg = a.agg.as_deref().unwrap_or("mean");
                let measured = agg_values(tail(&diffs, frac), agg);
                AssertionResult {
                    name: a.name.clone(),
                    kind: a.kind.clone(),
                    passed: measured < rel,
                    measured,
                    threshold: rel,
                    detail: format!("{agg} relative error vs {value} over last {frac}"),
                }
            }
            "min_above" => {
                let col = need_col()?;
                let min = a.min.ok_or_else(|| Error::config(format!("assertion '{}' needs min", a.name)))?;
                let measured = col.iter().cloned().fold(f64::INFINITY, f64::min);
                AssertionResult {
                    name: a.name.clone(),
                    kind: a.kind.clone(),
                    passed: measured > min,
                    measured,
                    threshold: min,
                    detail: "minimum over the whole run".into(),
                }
            }
            "ever" => {
                let col = need_col()?;
                let above = a.above.ok_or_else(|| Error::config(format!("assertion '{}' needs above", a.name)))?;
                let measured = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                AssertionResult {
                    name: a.name.clone(),
                    kind: a.kind.clone(),
                    passed: measured > above,
                    measured,
                    threshold: above,
                    detail: "maximum over the whole run".into(),
                }
            }
            "ratio_drop" => {
                let col = need_col()?;
                let frac = a.frac.ok_or_else(|| Error::config(format!("assertion '{}' needs frac", a.name)))?;
                let first = col.first().unwrap();
                let measured = col.last().unwrap() / first;
                AssertionResult {
                    name: a.name.clone(),
                    kind: a.kind.clone(),
                    passed: measured < frac && first.is_finite(),
                    measured,
                    threshold: frac,
                    detail: format!("final/initial with initial = {first}"),
                }
            }
            "dominates_after" => {
                let col = need_col()?;
                let other = log.column(a.col_b.as_deref().ok_or_else(|| {
                    Error::config(format!("assertion '{}' needs col_b", a.name))
                })?)?;
                let crossing = col.iter().zip(&other).position(|(x, y)| x > y);
                let (passed, measured, detail) = match crossing {
                    None => (false, 0.0, "never crosses".to_string()),
                    Some(i) => {
                        let after = &col[i..];
                        let other_after = &other[i..];
                        let held = after
                            .iter()
                            .zip(other_after)
                            .filter(|(x, y)| x > y)
                            .count();
                        let frac = held as f64 / after.len() as f64;
                        (frac == 1.0, frac, format!("crosses at row {i}, holds for {held}/{} rows", after.len()))
                    }
                };
                AssertionResult {
                    name: a.name.clone(),
                    kind: a.kind.clone(),
                    passed,
                    measured,
                    threshold: 1.0,
                    detail,
                }
            }
            "stage_order" => {
                let prefix = a.prefix.as_deref().ok_or_else(|| {
                    Error::config(format!("assertion '{}' needs prefix", a.name))
                })?;
                let order = a.order.as_ref().ok_or_else(|| {
                    Error::config(format!("assertion '{}' needs order", a.name))
                })?;
                let mut cols = Vec::new();
                for k in 0.. {
                    match log.index_of(&format!("{prefix}{k}")) {
                        Ok(i) => cols.push(i),
                        Err(_) => break,
                    }
                }
                if cols.is_empty() {
                    return Err(Error::config(format!(
                        "assertion '{}': no columns with prefix '{prefix}'",
                        a.name
                    )));
                }
                let mut seq: Vec<usize> = Vec::new();
                for row in &log.rows {
                    let arg = cols
                        .iter()
                        .enumerate()
                        .max_by(|(_, &x), (_, &y)| row[x].partial_cmp(&row[y]).unwrap())
                        .map(|(k, _)| k)
                        .unwrap();
                    if seq.last() != Some(&arg) {
                        seq.push(arg);
                    }
                }
                let mut want = order.iter();
                let mut next = want.next();
                for &s in &seq {
                    if Some(&s) == next {
                        next = want.next();
                    }
                }
                let matched = order.len() - (next.map(|_| 1 + want.count()).unwrap_or(0));
                AssertionResult {
                    name: a.name.clone(),
                    kind: a.kind.clone(),
                    passed: next.is_none(),
                    measured: matched as f64,
                    threshold: order.len() as f64,
                    detail: format!("visited stages {seq:?}, expected subsequence {order:?}"),
                }
            }
            _ => unreachable!("validated"),
        };
        out.push(result);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// artifacts

pub struct RunArtifacts {
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    pub summary: Summary,
}

/// Run the scenario and write `<name>.csv` and `<name>.summary.toml` into
/// `out_dir` (created if absent).
pub fn run(s: &Scenario, out_dir: &Path, seed_override: Option<u64>) -> Result<RunArtifacts> {
    let out = simulate(s, seed_override)?;
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("{}.csv", s.config.name));
    let summary_path = out_dir.join(format!("{}.summary.toml", s.config.name));
    let mut f = fs::File::create(&csv_path)?;
    f.write_all(out.log.to_csv().as_bytes())?;
    let text = toml::to_string_pretty(&out.summary)
        .map_err(|e| Error::config(format!("summary serialization: {e}")))?;
    fs::write(&summary_path, text)?;
    Ok(RunArtifacts { csv_path, summary_path, summary: out.summary })
}
