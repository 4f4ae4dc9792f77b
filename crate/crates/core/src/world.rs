//! The generative process: ground-truth arms and objects, observation
//! synthesis, touch detection, and actuation. The world never reads agent
//! beliefs; information flows out through observations and in through joint
//! velocities only.

use nalgebra::{DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::kinematics::{roto_translate, ExtrinsicState, IntrinsicState, ObsBundle};
use crate::{Error, Result};

/// Autonomous motion of an object, analytic in time so trajectories never
/// accumulate integration drift.
#[derive(Debug, Clone)]
pub enum MotionLaw {
    Static,
    Linear { velocity: Vector2<f64> },
    Circular { center: Vector2<f64>, radius: f64, omega: f64, phase: f64 },
    /// Piecewise-linear interpolation of `(time, position)` waypoints,
    /// clamped at both ends.
    Scripted { waypoints: Vec<(f64, Vector2<f64>)> },
}

impl MotionLaw {
    fn position_at(&self, init: Vector2<f64>, t: f64) -> Vector2<f64> {
        match self {
            MotionLaw::Static => init,
            MotionLaw::Linear { velocity } => init + velocity * t,
            MotionLaw::Circular { center, radius, omega, phase } => {
                let a = phase + omega * t;
                center + *radius * Vector2::new(a.cos(), a.sin())
            }
            MotionLaw::Scripted { waypoints } => {
                if waypoints.is_empty() {
                    return init;
                }
                if t <= waypoints[0].0 {
                    return waypoints[0].1;
                }
                for w in waypoints.windows(2) {
                    let ((t0, p0), (t1, p1)) = (w[0], w[1]);
                    if t <= t1 {
                        let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                        return p0 + (p1 - p0) * s;
                    }
                }
                waypoints.last().unwrap().1
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorldObject {
    pub name: String,
    /// Reference position the motion law unfolds from.
    pub init: Vector2<f64>,
    pub position: Vector2<f64>,
    pub orientation: f64,
    /// Contact radius for touch and grasp checks.
    pub radius: f64,
    pub motion: MotionLaw,
    pub carried_by: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmKind {
    /// Chain of revolute joints; actions are joint velocities.
    Revolute,
    /// A point effector; "angles" are its coordinates, actions its velocity.
    Cartesian,
}

/// Finger joints with their fully-closed angles (signed: opposed fingers
/// close in opposite rotational directions). Each finger contributes its
/// progress toward closed, clamped to [0, 1]; the mean is the closure.
/// Grasp and release thresholds are hysteretic.
#[derive(Debug, Clone)]
pub struct Gripper {
    pub joints: Vec<(usize, f64)>,
    pub grasp_threshold: f64,
    pub release_threshold: f64,
}

#[derive(Debug, Clone)]
pub struct Arm {
    pub kind: ArmKind,
    pub root: ExtrinsicState,
    pub lengths: Vec<f64>,
    pub angles: DVector<f64>,
    /// Parent joint per joint (None = rooted at the base frame); joints
    /// form a tree so fingers can branch off a wrist.
    pub parents: Vec<Option<usize>>,
    /// Joint whose pose counts as the end effector for touch and grasp.
    pub effector: usize,
    pub gripper: Option<Gripper>,
}

impl Arm {
    pub fn dof(&self) -> usize {
        self.angles.len()
    }

    pub fn poses(&self) -> Vec<ExtrinsicState> {
        match self.kind {
            ArmKind::Revolute => {
                let mut out: Vec<ExtrinsicState> = Vec::with_capacity(self.angles.len());
                for i in 0..self.angles.len() {
                    let parent = match self.parents[i] {
                        Some(p) => out[p],
                        None => self.root,
                    };
                    out.push(roto_translate(
                        &parent,
                        &IntrinsicState::new(self.angles[i], self.lengths[i]),
                    ));
                }
                out
            }
            ArmKind::Cartesian => {
                vec![ExtrinsicState::new(self.angles[0], self.angles[1], 0.0)]
            }
        }
    }

    pub fn hand(&self) -> Vector2<f64> {
        self.poses()
            .get(self.effector)
            .map(|p| p.position)
            .unwrap_or(self.root.position)
    }

    pub fn closure(&self) -> f64 {
        match &self.gripper {
            None => 0.0,
            Some(g) => {
                let sum: f64 = g
                    .joints
                    .iter()
                    .map(|&(j, closed)| (self.angles[j] / closed).clamp(0.0, 1.0))
                    .sum();
                sum / g.joints.len() as f64
            }
        }
    }

    pub fn total_length(&self) -> f64 {
        self.lengths.iter().sum()
    }
}

/// Observation noise (standard deviations) per modality.
#[derive(Debug, Clone, Copy)]
pub struct NoiseConfig {
    pub proprio: f64,
    pub vision: f64,
    pub touch: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { proprio: 0.01, vision: 0.01, touch: 0.05 }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self { proprio: 0.0, vision: 0.0, touch: 0.0 }
    }
}

/// What one named observation channel measures.
#[derive(Debug, Clone)]
pub enum ChannelSource {
    /// All joint angles of one arm (coordinates for a cartesian effector).
    JointAngles { arm: usize },
    /// Selected components `[x, y, orientation]` of the end-effector pose.
    HandPose { arm: usize, comps: Vec<usize> },
    /// Selected components of an intermediate joint pose.
    JointPose { arm: usize, joint: usize, comps: Vec<usize> },
    ObjectPosition { object: String },
    /// The analytic angle of a circularly moving object (unwrapped; the
    /// rotating-target tasks observe the target as an angle).
    ObjectAngle { object: String },
    /// 1 when the arm's end effector is within any object's contact radius.
    Touch { arm: usize },
}

#[derive(Debug, Clone)]
pub struct ObsChannel {
    pub name: String,
    pub source: ChannelSource,
}

impl ObsChannel {
    pub fn new(name: impl Into<String>, source: ChannelSource) -> Self {
        Self { name: name.into(), source }
    }
}

pub struct World {
    pub dt: f64,
    pub tick: u64,
    pub arms: Vec<Arm>,
    pub objects: Vec<WorldObject>,
    pub noise: NoiseConfig,
    /// touch[arm][object], refreshed every step.
    pub touch: Vec<Vec<bool>>,
    rng: ChaCha8Rng,
}

impl World {
    pub fn new(dt: f64, seed: u64, noise: NoiseConfig) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::config("world dt must be positive"));
        }
        Ok(Self {
            dt,
            tick: 0,
            arms: Vec::new(),
            objects: Vec::new(),
            noise,
            touch: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    /// Serial chain: each joint hangs on the previous one, the last is the
    /// end effector.
    pub fn add_revolute_arm(
        &mut self,
        root: ExtrinsicState,
        lengths: &[f64],
        angles: &[f64],
    ) -> Result<usize> {
        let parents: Vec<Option<usize>> =
            (0..lengths.len()).map(|i| i.checked_sub(1)).collect();
        self.add_revolute_tree(root, lengths, angles, &parents, lengths.len().saturating_sub(1))
    }

    /// Branching body: parents must precede children; `effector` names the
    /// joint used for touch and grasp (a palm, so closing fingers hanging
    /// off it does not move the contact point).
    pub fn add_revolute_tree(
        &mut self,
        root: ExtrinsicState,
        lengths: &[f64],
        angles: &[f64],
        parents: &[Option<usize>],
        effector: usize,
    ) -> Result<usize> {
        if lengths.len() != angles.len() || lengths.len() != parents.len() || lengths.is_empty() {
            return Err(Error::dims("arm layout", lengths.len(), angles.len()));
        }
        if effector >= lengths.len() {
            return Err(Error::config("effector joint out of range"));
        }
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                if *p >= i {
                    return Err(Error::config(format!("joint {i} precedes its parent")));
                }
            }
        }
        self.arms.push(Arm {
            kind: ArmKind::Revolute,
            root,
            lengths: lengths.to_vec(),
            angles: DVector::from_vec(angles.to_vec()),
            parents: parents.to_vec(),
            effector,
            gripper: None,
        });
        self.sync_touch();
        Ok(self.arms.len() - 1)
    }

    pub fn add_cartesian_arm(&mut self, position: Vector2<f64>) -> usize {
        self.arms.push(Arm {
            kind: ArmKind::Cartesian,
            root: ExtrinsicState::origin(),
            lengths: Vec::new(),
            angles: DVector::from_vec(vec![position.x, position.y]),
            parents: vec![None],
            effector: 0,
            gripper: None,
        });
        self.sync_touch();
        self.arms.len() - 1
    }

    pub fn add_object(
        &mut self,
        name: impl Into<String>,
        position: Vector2<f64>,
        radius: f64,
        motion: MotionLaw,
    ) -> Result<usize> {
        let name = name.into();
        if self.objects.iter().any(|o| o.name == name) {
            return Err(Error::config(format!("object '{name}' already exists")));
        }
        self.objects.push(WorldObject {
            name,
            init: position,
            position,
            orientation: 0.0,
            radius,
            motion,
            carried_by: None,
        });
        self.sync_touch();
        Ok(self.objects.len() - 1)
    }

    fn sync_touch(&mut self) {
        self.touch = vec![vec![false; self.objects.len()]; self.arms.len()];
    }

    pub fn object(&self, name: &str) -> Result<&WorldObject> {
        self.objects
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| Error::config(format!("no object named '{name}'")))
    }

    fn object_index(&self, name: &str) -> Result<usize> {
        self.objects
            .iter()
            .position(|o| o.name == name)
            .ok_or_else(|| Error::config(format!("no object named '{name}'")))
    }

    pub fn hand_position(&self, arm: usize) -> Vector2<f64> {
        self.arms[arm].hand()
    }

    /// Move an object while keeping its motion law consistent, so the jump
    /// persists instead of being undone by the next analytic evaluation.
    pub fn displace_object(&mut self, name: &str, position: Vector2<f64>) -> Result<()> {
        let t = self.time();
        let i = self.object_index(name)?;
        let obj = &mut self.objects[i];
        match &mut obj.motion {
            MotionLaw::Static => obj.init = position,
            MotionLaw::Linear { velocity } => obj.init = position - *velocity * t,
            MotionLaw::Circular { center, radius, omega, phase } => {
                let d = position - *center;
                *radius = d.norm();
                *phase = d.y.atan2(d.x) - *omega * t;
            }
            MotionLaw::Scripted { .. } => {
                obj.motion = MotionLaw::Static;
                obj.init = position;
            }
        }
        obj.position = obj.motion.position_at(obj.init, t);
        Ok(())
    }

    /// Advance one tick: integrate joint velocities, move objects along
    /// their laws, resolve kinematic grasping, refresh touch flags.
    pub fn step(&mut self, actions: &[DVector<f64>]) -> Result<()> {
        if actions.len() != self.arms.len() {
            return Err(Error::dims("world actions", actions.len(), self.arms.len()));
        }
        for (arm, a) in self.arms.iter_mut().zip(actions) {
            if a.len() != arm.angles.len() {
                return Err(Error::dims("arm action", a.len(), arm.angles.len()));
            }
            arm.angles.axpy(self.dt, a, 1.0);
        }
        self.tick += 1;
        let t = self.time();

        let hands: Vec<Vector2<f64>> = self.arms.iter().map(|a| a.hand()).collect();
        let closures: Vec<f64> = self.arms.iter().map(|a| a.closure()).collect();
        for obj in &mut self.objects {
            match obj.carried_by {
                Some(a) => {
                    let g = self.arms[a].gripper.as_ref().expect("carrier has a gripper");
                    if closures[a] < g.release_threshold {
                        obj.carried_by = None;
                        // the object stays where it was let go
                        obj.motion = MotionLaw::Static;
                        obj.init = obj.position;
                    } else {
                        obj.position = hands[a];
                    }
                }
                None => {
                    obj.position = obj.motion.position_at(obj.init, t);
                    for (a, arm) in self.arms.iter().enumerate() {
                        let Some(g) = &arm.gripper else { continue };
                        if (hands[a] - obj.position).norm() < obj.radius
                            && closures[a] > g.grasp_threshold
                        {
                            obj.carried_by = Some(a);
                            obj.position = hands[a];
                            break;
                        }
                    }
                }
            }
        }
        for (a, row) in self.touch.iter_mut().enumerate() {
            for (o, flag) in row.iter_mut().enumerate() {
                *flag = (hands[a] - self.objects[o].position).norm() < self.objects[o].radius;
            }
        }
        Ok(())
    }

    fn noisy(&mut self, value: f64, sigma: f64) -> f64 {
        let n = Normal::new(0.0, sigma).expect("valid sigma");
        value + n.sample(&mut self.rng)
    }

    /// Synthesize the named observations. Noise is drawn in channel-list
    /// order, so a fixed seed and channel list replays bitwise.
    pub fn observe(&mut self, channels: &[ObsChannel]) -> Result<ObsBundle> {
        let mut out = ObsBundle::new();
        for ch in channels {
            let value = match &ch.source {
                ChannelSource::JointAngles { arm } => {
                    let arm = self.arm_ref(*arm)?;
                    let angles = arm.angles.clone();
                    let sigma = self.noise.proprio;
                    DVector::from_iterator(
                        angles.len(),
                        angles.iter().map(|&a| self.noisy(a, sigma)),
                    )
                }
                ChannelSource::HandPose { arm, comps } => {
                    let arm = self.arm_ref(*arm)?;
                    let pose = arm.poses()[arm.effector].to_vector();
                    self.pose_obs(&pose, comps)
                }
                ChannelSource::JointPose { arm, joint, comps } => {
                    let poses = self.arm_ref(*arm)?.poses();
                    let pose = poses
                        .get(*joint)
                        .ok_or_else(|| Error::config(format!("no joint {joint} on arm {arm}")))?
                        .to_vector();
                    self.pose_obs(&pose, comps)
                }
                ChannelSource::ObjectPosition { object } => {
                    let p = self.object(object)?.position;
                    let sigma = self.noise.vision;
                    DVector::from_vec(vec![self.noisy(p.x, sigma), self.noisy(p.y, sigma)])
                }
                ChannelSource::ObjectAngle { object } => {
                    let obj = self.object(object)?;
                    let MotionLaw::Circular { omega, phase, .. } = obj.motion else {
                        return Err(Error::config(format!(
                            "object '{object}' has no angle observable"
                        )));
                    };
                    let a = phase + omega * self.time();
                    let sigma = self.noise.vision;
                    DVector::from_vec(vec![self.noisy(a, sigma)])
                }
                ChannelSource::Touch { arm } => {
                    if *arm >= self.arms.len() {
                        return Err(Error::config(format!("no arm {arm}")));
                    }
                    let hit = self.touch[*arm].iter().any(|&b| b);
                    let sigma = self.noise.touch;
                    let v = self.noisy(hit as u8 as f64, sigma).clamp(0.0, 1.0);
                    DVector::from_vec(vec![v])
                }
            };
            out.insert(ch.name.clone(), value);
        }
        Ok(out)
    }

    fn arm_ref(&self, arm: usize) -> Result<&Arm> {
        self.arms.get(arm).ok_or_else(|| Error::config(format!("no arm {arm}")))
    }

    fn pose_obs(&mut self, pose: &DVector<f64>, comps: &[usize]) -> DVector<f64> {
        let sigma = self.noise.vision;
        DVector::from_iterator(comps.len(), comps.iter().map(|&c| self.noisy(pose[c], sigma)))
    }
}
