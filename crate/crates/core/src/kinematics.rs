//! Planar kinematic chains and the intrinsic/extrinsic module hierarchy.
//!
//! Each module pairs an intrinsic state (joint angle relative to the parent,
//! limb length) with an extrinsic one (Cartesian position, absolute
//! orientation). The extrinsic pose of a module is predicted from its parent
//! by a planar roto-translation; running that prediction down a chain is
//! forward kinematics, and backpropagating the prediction errors through the
//! hand-derived gradients is inverse kinematics by inference.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, Vector2};

use crate::{Error, Result};

/// Joint angle (rad, relative to parent) and limb length (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntrinsicState {
    pub angle: f64,
    pub length: f64,
}

impl IntrinsicState {
    pub fn new(angle: f64, length: f64) -> Self {
        Self { angle, length }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.angle, self.length])
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self { angle: v[0], length: v[1] }
    }
}

/// Cartesian position (m) and absolute orientation (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrinsicState {
    pub position: Vector2<f64>,
    pub orientation: f64,
}

impl ExtrinsicState {
    pub fn new(x: f64, y: f64, orientation: f64) -> Self {
        Self { position: Vector2::new(x, y), orientation }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.position.x, self.position.y, self.orientation])
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self { position: Vector2::new(v[0], v[1]), orientation: v[2] }
    }
}

/// One planar roto-translation: rotate by the joint angle, advance along the
/// new orientation by the limb length.
pub fn roto_translate(parent: &ExtrinsicState, intr: &IntrinsicState) -> ExtrinsicState {
    let ori = parent.orientation + intr.angle;
    ExtrinsicState {
        position: parent.position + intr.length * Vector2::new(ori.cos(), ori.sin()),
        orientation: ori,
    }
}

/// Fold roto-translations along a chain; the last pose is the end effector.
pub fn forward_kinematics(chain: &[IntrinsicState], root: &ExtrinsicState) -> Vec<ExtrinsicState> {
    let mut out = Vec::with_capacity(chain.len());
    let mut frame = *root;
    for intr in chain {
        frame = roto_translate(&frame, intr);
        out.push(frame);
    }
    out
}

/// Jacobians of the roto-translation output `[px, py, ori]` with respect to
/// the parent extrinsic state and the intrinsic state `[angle, length]`.
pub struct RotoJacobians {
    pub wrt_parent: Matrix3<f64>,
    pub wrt_intr: Matrix3x2<f64>,
}

pub fn roto_jacobians(parent: &ExtrinsicState, intr: &IntrinsicState) -> RotoJacobians {
    let ori = parent.orientation + intr.angle;
    let (s, c) = ori.sin_cos();
    let l = intr.length;
    let wrt_parent = Matrix3::new(
        1.0, 0.0, -l * s,
        0.0, 1.0, l * c,
        0.0, 0.0, 1.0,
    );
    let wrt_intr = Matrix3x2::new(
        -l * s, c,
        l * c, s,
        1.0, 0.0,
    );
    RotoJacobians { wrt_parent, wrt_intr }
}

/// End-effector position of a fixed-length chain as a function of the joint
/// angles. Used by flat agents whose visual likelihood is forward kinematics.
pub fn hand_position(root: &ExtrinsicState, lengths: &[f64], angles: &DVector<f64>) -> Result<Vector2<f64>> {
    if lengths.len() != angles.len() {
        return Err(Error::dims("hand_position", lengths.len(), angles.len()));
    }
    let chain: Vec<IntrinsicState> = lengths
        .iter()
        .zip(angles.iter())
        .map(|(&l, &a)| IntrinsicState::new(a, l))
        .collect();
    Ok(forward_kinematics(&chain, root)
        .last()
        .map(|e| e.position)
        .unwrap_or(root.position))
}

/// `d hand / d angles` (2 x n) for the fixed-length chain.
pub fn hand_jacobian(root: &ExtrinsicState, lengths: &[f64], angles: &DVector<f64>) -> Result<DMatrix<f64>> {
    if lengths.len() != angles.len() {
        return Err(Error::dims("hand_jacobian", lengths.len(), angles.len()));
    }
    let n = angles.len();
    let mut cum = root.orientation;
    let mut cums = Vec::with_capacity(n);
    for k in 0..n {
        cum += angles[k];
        cums.push(cum);
    }
    let mut jac = DMatrix::zeros(2, n);
    // Joint i moves every segment k >= i.
    for k in 0..n {
        let (s, c) = cums[k].sin_cos();
        for i in 0..=k {
            jac[(0, i)] += -lengths[k] * s;
            jac[(1, i)] += lengths[k] * c;
        }
    }
    Ok(jac)
}

/// Directional second derivative: `d(J^T w)/d angles` (n x n) for a constant
/// weight vector `w`. Needed by the duplicated-kinematics dynamics Jacobian.
pub fn hand_jtv_jacobian(
    root: &ExtrinsicState,
    lengths: &[f64],
    angles: &DVector<f64>,
    w: &Vector2<f64>,
) -> Result<DMatrix<f64>> {
    if lengths.len() != angles.len() {
        return Err(Error::dims("hand_jtv_jacobian", lengths.len(), angles.len()));
    }
    let n = angles.len();
    let mut cum = root.orientation;
    let mut cums = Vec::with_capacity(n);
    for k in 0..n {
        cum += angles[k];
        cums.push(cum);
    }
    // (J^T w)_i = sum_{k>=i} l_k (-sin(c_k) w_x + cos(c_k) w_y)
    // d/d angle_j adds -cos(c_k) w_x - sin(c_k) w_y over k >= max(i, j).
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let lo = i.max(j);
            let mut acc = 0.0;
            for k in lo..n {
                let (s, c) = cums[k].sin_cos();
                acc += lengths[k] * (-c * w.x - s * w.y);
            }
            h[(i, j)] = acc;
        }
    }
    Ok(h)
}

/// Backpropagated extrinsic-error gradients of one module: the pull on the
/// parent extrinsic state and the pull on the module's own intrinsic state.
/// Both carry the sign with which they enter a gradient-flow update (they
/// are the negative free-energy gradients of this error term).
pub fn ie_gradients(
    parent: &ExtrinsicState,
    intr: &IntrinsicState,
    eps: &crate::math::PredictionError,
) -> (DVector<f64>, DVector<f64>) {
    let j = roto_jacobians(parent, intr);
    let w = eps.weighted();
    let w3 = nalgebra::Vector3::new(w[0], w[1], w[2]);
    let gp = j.wrt_parent.transpose() * w3;
    let gi = j.wrt_intr.transpose() * w3;
    (
        DVector::from_vec(vec![gp[0], gp[1], gp[2]]),
        DVector::from_vec(vec![gi[0], gi[1]]),
    )
}

use std::collections::HashMap;

use crate::hybrid::HybridHead;
use crate::intention::Intention;
use crate::math::{GeneralizedBelief, Precision, PredictionError};

pub const INTR_DIM: usize = 2;
pub const EXTR_DIM: usize = 3;

/// Which belief of a block a site component reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Intrinsic,
    Extrinsic,
}

/// One slice of a site vector: selected components of one block's belief.
#[derive(Debug, Clone)]
pub struct SiteComponent {
    pub module: usize,
    pub pathway: usize,
    pub frame: Frame,
    pub comps: Vec<usize>,
}

/// An ordered concatenation of belief slices across the network. Dynamics
/// attachments (intentions, hybrid heads, repulsors) act on site vectors.
#[derive(Debug, Clone)]
pub struct Site {
    pub components: Vec<SiteComponent>,
}

impl Site {
    pub fn dim(&self) -> usize {
        self.components.iter().map(|c| c.comps.len()).sum()
    }
}

/// Exteroceptive channel observing selected extrinsic components.
pub struct VisionChannel {
    pub name: String,
    pub comps: Vec<usize>,
    pub precision: Precision,
}

/// Beliefs and channels of one module within one pathway.
pub struct Block {
    /// [angle, length]
    pub intr: GeneralizedBelief,
    /// [x, y, orientation]
    pub extr: GeneralizedBelief,
    /// Precision of the hierarchical extrinsic prediction error.
    pub pi_oe: Precision,
    /// Proprioceptive precision on the joint angle (self pathway only).
    pub proprio: Option<f64>,
    pub vision: Vec<VisionChannel>,
    pub intr_prior: Option<crate::unit::PriorTerm>,
    /// Lengths are inferable in non-self pathways, fixed in the self one.
    pub length_free: bool,
}

/// Free extrinsic belief at the base of a pathway (used when an entity is
/// attached at the root level, or when a pathway's base is itself uncertain).
pub struct RootBlock {
    pub extr: GeneralizedBelief,
    pub vision: Vec<VisionChannel>,
    pub prior: Option<crate::unit::PriorTerm>,
}

pub struct ModuleNode {
    pub name: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// A virtual module exists in exactly one non-self pathway.
    pub only_pathway: Option<usize>,
}

pub struct PathwayDef {
    pub name: String,
    /// Base reference frame when no root block is present.
    pub root: ExtrinsicState,
    /// Module ids along the pathway, root side first.
    pub path: Vec<usize>,
    pub root_block: Option<RootBlock>,
}

/// Repulsive term mixed into a site's expected trajectory: pushes the slice
/// at `offset` away from an observed obstacle position within the cutoff.
pub struct Repulsor {
    pub offset: usize,
    pub obstacle: String,
    pub gain: f64,
    pub cutoff: f64,
}

/// Intention-driven dynamics over a site: the expected trajectory is the
/// cause-weighted mixture of intention attractor errors (plus repulsors).
/// When a hybrid head is present it owns the causes and the model bank.
pub struct DynamicsAttachment {
    pub name: String,
    pub site: Site,
    pub intentions: Vec<Intention>,
    pub causes: DVector<f64>,
    pub head: Option<HybridHead>,
    pub repulsors: Vec<Repulsor>,
    pub precision: Precision,
}

impl DynamicsAttachment {
    fn weighted_models(&self) -> (Vec<&Intention>, &DVector<f64>) {
        match &self.head {
            Some(h) => (h.models.iter().map(|m| &m.intention).collect(), &h.causes),
            None => (self.intentions.iter().collect(), &self.causes),
        }
    }

    /// Expected site trajectory and its Jacobian with respect to the site.
    fn trajectory_and_jacobian(
        &self,
        x: &DVector<f64>,
        obs: &ObsBundle,
        missing: &mut Vec<String>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let (models, weights) = self.weighted_models();
        let mut eta = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, n);
        for (m, intent) in models.iter().enumerate() {
            let e = intent.attractor_error(x).expect("checked dims");
            eta.axpy(weights[m], &e, 1.0);
            jac += intent.error_jacobian() * weights[m];
        }
        for rep in &self.repulsors {
            let Some(center) = obs.get(&rep.obstacle) else {
                missing.push(rep.obstacle.clone());
                continue;
            };
            let d = Vector2::new(x[rep.offset] - center[0], x[rep.offset + 1] - center[1]);
            let r = d.norm();
            if r >= rep.cutoff || r < 1e-9 {
                continue;
            }
            let r3 = r.powi(3);
            let r5 = r.powi(5);
            eta[rep.offset] += rep.gain * d.x / r3;
            eta[rep.offset + 1] += rep.gain * d.y / r3;
            for a in 0..2 {
                for b in 0..2 {
                    let kron = if a == b { 1.0 } else { 0.0 };
                    jac[(rep.offset + a, rep.offset + b)] +=
                        rep.gain * (kron / r3 - 3.0 * d[a] * d[b] / r5);
                }
            }
        }
        (eta, jac)
    }
}

/// Named observation vectors for one tick; absent keys are silent channels.
#[derive(Default, Clone)]
pub struct ObsBundle {
    values: HashMap<String, DVector<f64>>,
}

impl ObsBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DVector<f64>) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&DVector<f64>> {
        self.values.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DVector<f64>)> {
        self.values.iter()
    }
}

/// One update term of one belief, tagged with where it came from. The
/// provenance makes pathway isolation checkable from the outside.
#[derive(Debug, Clone)]
pub struct TermReport {
    pub module: String,
    pub pathway: String,
    pub frame: &'static str,
    pub source: &'static str,
    pub norm: f64,
}

pub struct NetworkReport {
    pub free_energy: f64,
    pub action_derivative: DVector<f64>,
    pub terms: Vec<TermReport>,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockRef {
    Node(usize, usize),
    Root(usize),
}

pub struct ModuleSpec {
    pub name: String,
    pub parent: Option<usize>,
    pub length: f64,
    pub angle: f64,
}

/// The synchronous hierarchical network: a tree of modules, per-pathway
/// belief blocks, exteroceptive channels, and site dynamics. Every tick
/// computes all errors from pre-tick beliefs and integrates every belief
/// once, so the result does not depend on block update order.
pub struct IeNetwork {
    pub modules: Vec<ModuleNode>,
    pub pathways: Vec<PathwayDef>,
    blocks: Vec<Vec<Option<Block>>>,
    pub attachments: Vec<DynamicsAttachment>,
}

pub const SELF_PATHWAY: usize = 0;

impl IeNetwork {
    /// Build the self pathway over a module tree. Parents must precede
    /// children; `parent: None` hangs the module on the root frame.
    /// Extrinsic beliefs start kinematically consistent with the angles.
    pub fn new(
        root: ExtrinsicState,
        specs: &[ModuleSpec],
        pi_oe: &Precision,
        pi_proprio: f64,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::config("network needs at least one module"));
        }
        if pi_oe.dim() != EXTR_DIM {
            return Err(Error::dims("extrinsic precision", pi_oe.dim(), EXTR_DIM));
        }
        let mut modules: Vec<ModuleNode> = Vec::with_capacity(specs.len());
        let mut blocks: Vec<Vec<Option<Block>>> = Vec::with_capacity(specs.len());
        let mut poses: Vec<ExtrinsicState> = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            if let Some(p) = spec.parent {
                if p >= i {
                    return Err(Error::config(format!(
                        "module '{}' must come after its parent",
                        spec.name
                    )));
                }
                modules[p].children.push(i);
            }
            if spec.length < 0.0 {
                return Err(Error::config(format!("module '{}' has negative length", spec.name)));
            }
            let parent_pose = match spec.parent {
                Some(p) => poses[p],
                None => root,
            };
            let intr = IntrinsicState::new(spec.angle, spec.length);
            let pose = roto_translate(&parent_pose, &intr);
            poses.push(pose);
            modules.push(ModuleNode {
                name: spec.name.clone(),
                parent: spec.parent,
                children: Vec::new(),
                only_pathway: None,
            });
            blocks.push(vec![Some(Block {
                intr: GeneralizedBelief::new(intr.to_vector(), DVector::zeros(INTR_DIM))?,
                extr: GeneralizedBelief::new(pose.to_vector(), DVector::zeros(EXTR_DIM))?,
                pi_oe: pi_oe.clone(),
                proprio: Some(pi_proprio),
                vision: Vec::new(),
                intr_prior: None,
                length_free: false,
            })]);
        }
        let pathways = vec![PathwayDef {
            name: "self".into(),
            root,
            path: (0..specs.len()).collect(),
            root_block: None,
        }];
        Ok(IeNetwork { modules, pathways, blocks, attachments: Vec::new() })
    }

    pub fn has_block(&self, module: usize, pathway: usize) -> bool {
        self.blocks
            .get(module)
            .and_then(|row| row.get(pathway))
            .map(|b| b.is_some())
            .unwrap_or(false)
    }

    pub fn block(&self, module: usize, pathway: usize) -> &Block {
        self.blocks[module][pathway].as_ref().expect("block exists")
    }

    pub fn block_mut(&mut self, module: usize, pathway: usize) -> &mut Block {
        self.blocks[module][pathway].as_mut().expect("block exists")
    }

    pub fn pathway_id(&self, name: &str) -> Option<usize> {
        self.pathways.iter().position(|p| p.name == name)
    }

    pub fn module_id(&self, name: &str) -> Option<usize> {
        self.modules.iter().position(|m| m.name == name)
    }

    pub fn attachment_mut(&mut self, name: &str) -> Option<&mut DynamicsAttachment> {
        self.attachments.iter_mut().find(|a| a.name == name)
    }

    /// Joint angles of the self pathway, module order.
    pub fn self_angles(&self) -> DVector<f64> {
        let ids = &self.pathways[SELF_PATHWAY].path;
        DVector::from_iterator(ids.len(), ids.iter().map(|&m| self.block(m, SELF_PATHWAY).intr.mu[0]))
    }

    pub fn self_module_count(&self) -> usize {
        self.pathways[SELF_PATHWAY].path.len()
    }

    /// Parallel factor block through every level from the root to `module`,
    /// observed through the given exteroceptive channel at the deepest
    /// level. `module: None` attaches at the root: the pathway is then just
    /// a free base frame with the channel on it. Beliefs start as a copy of
    /// the self pathway (the current posture is the first guess at the
    /// potential configuration) and limb lengths become inferable.
    pub fn attach_entity_pathway(
        &mut self,
        name: &str,
        module: Option<usize>,
        channel: VisionChannel,
        pi_oe: &Precision,
    ) -> Result<usize> {
        if self.pathways.iter().any(|p| p.name == name) {
            return Err(Error::config(format!("pathway '{name}' already exists")));
        }
        let p_id = self.pathways.len();
        let root = self.pathways[SELF_PATHWAY].root;
        let mut def = PathwayDef { name: name.into(), root, path: Vec::new(), root_block: None };
        match module {
            None => {
                def.root_block = Some(RootBlock {
                    extr: GeneralizedBelief::new(root.to_vector(), DVector::zeros(EXTR_DIM))?,
                    vision: vec![channel],
                    prior: None,
                });
            }
            Some(m) => {
                if m >= self.modules.len() {
                    return Err(Error::config(format!("no module {m} to attach '{name}' to")));
                }
                let mut path = Vec::new();
                let mut cur = Some(m);
                while let Some(i) = cur {
                    path.push(i);
                    cur = self.modules[i].parent;
                }
                path.reverse();
                for &i in &path {
                    let src = self.blocks[i][SELF_PATHWAY]
                        .as_ref()
                        .ok_or_else(|| Error::config("entity pathway crosses a virtual module"))?;
                    let block = Block {
                        intr: src.intr.clone(),
                        extr: src.extr.clone(),
                        pi_oe: pi_oe.clone(),
                        proprio: None,
                        vision: Vec::new(),
                        intr_prior: None,
                        length_free: true,
                    };
                    while self.blocks[i].len() <= p_id {
                        self.blocks[i].push(None);
                    }
                    self.blocks[i][p_id] = Some(block);
                }
                self.blocks[m][p_id].as_mut().unwrap().vision.push(channel);
                def.path = path;
            }
        }
        self.pathways.push(def);
        Ok(p_id)
    }

    /// Extra module beyond the deepest level of a non-self pathway (a tool
    /// link whose angle and length are inferable).
    pub fn attach_virtual_level(
        &mut self,
        pathway: usize,
        init: IntrinsicState,
        pi_oe: &Precision,
    ) -> Result<usize> {
        if pathway == SELF_PATHWAY {
            return Err(Error::config("the self pathway has no virtual level"));
        }
        let def = self
            .pathways
            .get(pathway)
            .ok_or_else(|| Error::config(format!("no pathway {pathway}")))?;
        let &deepest = def
            .path
            .last()
            .ok_or_else(|| Error::config("cannot extend a root-only pathway"))?;
        let m_id = self.modules.len();
        let parent_pose =
            ExtrinsicState::from_vector(&self.block(deepest, pathway).extr.mu);
        let pose = roto_translate(&parent_pose, &init);
        self.modules.push(ModuleNode {
            name: format!("{}.virtual", self.pathways[pathway].name),
            parent: Some(deepest),
            children: Vec::new(),
            only_pathway: Some(pathway),
        });
        self.modules[deepest].children.push(m_id);
        let mut row: Vec<Option<Block>> = Vec::new();
        while row.len() <= pathway {
            row.push(None);
        }
        row[pathway] = Some(Block {
            intr: GeneralizedBelief::new(init.to_vector(), DVector::zeros(INTR_DIM))?,
            extr: GeneralizedBelief::new(pose.to_vector(), DVector::zeros(EXTR_DIM))?,
            pi_oe: pi_oe.clone(),
            proprio: None,
            vision: Vec::new(),
            intr_prior: None,
            length_free: true,
        });
        self.blocks.push(row);
        self.pathways[pathway].path.push(m_id);
        Ok(m_id)
    }

    pub fn add_vision(&mut self, module: usize, pathway: usize, channel: VisionChannel) {
        self.block_mut(module, pathway).vision.push(channel);
    }

    pub fn add_attachment(&mut self, attachment: DynamicsAttachment) -> Result<()> {
        let dim = attachment.site.dim();
        if attachment.precision.dim() != dim {
            return Err(Error::dims("site precision", attachment.precision.dim(), dim));
        }
        for c in &attachment.site.components {
            if self.blocks[c.module].get(c.pathway).and_then(|b| b.as_ref()).is_none() {
                return Err(Error::config(format!(
                    "attachment '{}' references a missing block",
                    attachment.name
                )));
            }
        }
        match &attachment.head {
            Some(h) => {
                for m in &h.models {
                    if m.intention.weights.nrows() != dim {
                        return Err(Error::dims("head model over site", m.intention.weights.nrows(), dim));
                    }
                }
                if h.full_precision.dim() != dim {
                    return Err(Error::dims("head precision", h.full_precision.dim(), dim));
                }
            }
            None => {
                if attachment.causes.len() != attachment.intentions.len() {
                    return Err(Error::dims(
                        "attachment causes",
                        attachment.causes.len(),
                        attachment.intentions.len(),
                    ));
                }
                for i in &attachment.intentions {
                    if i.weights.nrows() != dim {
                        return Err(Error::dims("intention over site", i.weights.nrows(), dim));
                    }
                }
            }
        }
        self.attachments.push(attachment);
        Ok(())
    }

    /// All belief blocks in canonical order (module-major, then pathway,
    /// root blocks last).
    pub fn block_refs(&self) -> Vec<BlockRef> {
        let mut out = Vec::new();
        for m in 0..self.modules.len() {
            for p in 0..self.blocks[m].len() {
                if self.blocks[m][p].is_some() {
                    out.push(BlockRef::Node(m, p));
                }
            }
        }
        for (p, def) in self.pathways.iter().enumerate() {
            if def.root_block.is_some() {
                out.push(BlockRef::Root(p));
            }
        }
        out
    }

    fn gather(&self, site: &Site, first_order: bool) -> DVector<f64> {
        let mut out = DVector::zeros(site.dim());
        let mut k = 0;
        for c in &site.components {
            let b = self.block(c.module, c.pathway);
            let g = match c.frame {
                Frame::Intrinsic => &b.intr,
                Frame::Extrinsic => &b.extr,
            };
            let v = if first_order { &g.mu_prime } else { &g.mu };
            for &comp in &c.comps {
                out[k] = v[comp];
                k += 1;
            }
        }
        out
    }

    /// Parent extrinsic frame of a block, read from pre-tick beliefs.
    fn parent_frame(&self, module: usize, pathway: usize) -> ExtrinsicState {
        match self.modules[module].parent {
            Some(q) if self.blocks[q].get(pathway).map_or(false, |b| b.is_some()) => {
                ExtrinsicState::from_vector(&self.block(q, pathway).extr.mu)
            }
            _ => match &self.pathways[pathway].root_block {
                Some(rb) => ExtrinsicState::from_vector(&rb.extr.mu),
                None => self.pathways[pathway].root,
            },
        }
    }

    pub fn tick(&mut self, obs: &ObsBundle, dt: f64) -> Result<NetworkReport> {
        let order: Vec<usize> = (0..self.block_refs().len()).collect();
        self.tick_ordered(obs, dt, &order)
    }

    /// One synchronous tick; `order` permutes only the final integration
    /// sweep, so any permutation yields bitwise identical results.
    pub fn tick_ordered(
        &mut self,
        obs: &ObsBundle,
        dt: f64,
        order: &[usize],
    ) -> Result<NetworkReport> {
        let refs = self.block_refs();
        if order.len() != refs.len() {
            return Err(Error::dims("tick order", order.len(), refs.len()));
        }
        let mut missing: Vec<String> = Vec::new();
        let mut terms: Vec<TermReport> = Vec::new();
        let mut free_energy = 0.0;

        // hierarchical prediction errors and their jacobians, per block
        struct EdgeData {
            eps_w: DVector<f64>,
            jac: RotoJacobians,
            energy: f64,
        }
        let mut edges: HashMap<(usize, usize), EdgeData> = HashMap::new();
        for &r in &refs {
            let BlockRef::Node(m, p) = r else { continue };
            let b = self.block(m, p);
            let parent = self.parent_frame(m, p);
            let intr = IntrinsicState::new(b.intr.mu[0], b.intr.mu[1].max(0.0));
            let pred = roto_translate(&parent, &intr);
            let eps = &b.extr.mu - pred.to_vector();
            let e = PredictionError::new(eps, b.pi_oe.clone())?;
            edges.insert(
                (m, p),
                EdgeData { eps_w: e.weighted(), jac: roto_jacobians(&parent, &intr), energy: e.energy() },
            );
            free_energy += edges[&(m, p)].energy;
        }

        // site dynamics: weighted errors, pulled-back gradients, evidence
        struct SiteData {
            w: DVector<f64>,
            jtw: DVector<f64>,
        }
        let mut sites: Vec<SiteData> = Vec::with_capacity(self.attachments.len());
        for ai in 0..self.attachments.len() {
            let x = self.gather(&self.attachments[ai].site, false);
            let xp = self.gather(&self.attachments[ai].site, true);
            let (eta, jac) =
                self.attachments[ai].trajectory_and_jacobian(&x, obs, &mut missing);
            let eps = &xp - &eta;
            let w = self.attachments[ai].precision.apply(&eps);
            free_energy += 0.5 * eps.dot(&w);
            sites.push(SiteData { jtw: jac.transpose() * &w, w });
            if let Some(head) = &mut self.attachments[ai].head {
                head.accumulate_evidence(&x, &xp, dt)?;
            }
        }

        // derivatives, all from pre-tick beliefs, fixed term order
        enum Deriv {
            Node { intr: GeneralizedBelief, extr: GeneralizedBelief },
            Root { extr: GeneralizedBelief },
        }
        let mut derivs: Vec<Deriv> = Vec::with_capacity(refs.len());
        let mut action = DVector::zeros(self.self_module_count());
        for &r in &refs {
            match r {
                BlockRef::Node(m, p) => {
                    let b = self.block(m, p);
                    let module_name = self.modules[m].name.clone();
                    let pathway_name = self.pathways[p].name.clone();
                    let mut report = |frame: &'static str, source: &'static str, norm: f64| {
                        terms.push(TermReport {
                            module: module_name.clone(),
                            pathway: pathway_name.clone(),
                            frame,
                            source,
                            norm,
                        });
                    };

                    let mut e0 = b.extr.mu_prime.clone();
                    let mut e1 = DVector::zeros(EXTR_DIM);
                    let own = &edges[&(m, p)];
                    e0 -= &own.eps_w;
                    report("extrinsic", "forward", own.eps_w.norm());

                    for &c in &self.modules[m].children {
                        if let Some(edge) = edges.get(&(c, p)) {
                            let w3 = nalgebra::Vector3::new(edge.eps_w[0], edge.eps_w[1], edge.eps_w[2]);
                            let g = edge.jac.wrt_parent.transpose() * w3;
                            for k in 0..EXTR_DIM {
                                e0[k] += g[k];
                            }
                            report("extrinsic", "children", g.norm());
                        }
                    }

                    for ch in &b.vision {
                        match obs.get(&ch.name) {
                            None => missing.push(ch.name.clone()),
                            Some(o) => {
                                let pred = DVector::from_iterator(
                                    ch.comps.len(),
                                    ch.comps.iter().map(|&c| b.extr.mu[c]),
                                );
                                let e = PredictionError::new(o - pred, ch.precision.clone())?;
                                let w = e.weighted();
                                for (row, &c) in ch.comps.iter().enumerate() {
                                    e0[c] += w[row];
                                }
                                free_energy += e.energy();
                                report("extrinsic", "vision", w.norm());
                            }
                        }
                    }

                    let mut i0 = b.intr.mu_prime.clone();
                    let mut i1 = DVector::zeros(INTR_DIM);
                    {
                        let w3 =
                            nalgebra::Vector3::new(own.eps_w[0], own.eps_w[1], own.eps_w[2]);
                        let g = own.jac.wrt_intr.transpose() * w3;
                        i0[0] += g[0];
                        i0[1] += g[1];
                        report("intrinsic", "forward", g.norm());
                    }

                    if let Some(pi_p) = b.proprio {
                        let key = format!("proprio.{module_name}");
                        match obs.get(&key) {
                            None => missing.push(key),
                            Some(o) => {
                                let eps = o[0] - b.intr.mu[0];
                                i0[0] += pi_p * eps;
                                free_energy += 0.5 * pi_p * eps * eps;
                                report("intrinsic", "proprio", (pi_p * eps).abs());
                                if p == SELF_PATHWAY {
                                    if let Some(j) = self.pathways[SELF_PATHWAY]
                                        .path
                                        .iter()
                                        .position(|&x| x == m)
                                    {
                                        action[j] = -dt * pi_p * eps;
                                    }
                                }
                            }
                        }
                    }

                    if let Some(prior) = &b.intr_prior {
                        let e = PredictionError::new(
                            &b.intr.mu - &prior.mean,
                            prior.precision.clone(),
                        )?;
                        let w = e.weighted();
                        i0 -= &w;
                        free_energy += e.energy();
                        report("intrinsic", "prior", w.norm());
                    }

                    for (ai, att) in self.attachments.iter().enumerate() {
                        let mut k = 0;
                        for c in &att.site.components {
                            if c.module == m && c.pathway == p {
                                let (d0, d1, frame) = match c.frame {
                                    Frame::Intrinsic => (&mut i0, &mut i1, "intrinsic"),
                                    Frame::Extrinsic => (&mut e0, &mut e1, "extrinsic"),
                                };
                                let mut norm2 = 0.0;
                                for (row, &comp) in c.comps.iter().enumerate() {
                                    let g = sites[ai].jtw[k + row];
                                    d0[comp] += g;
                                    d1[comp] -= sites[ai].w[k + row];
                                    norm2 += g * g;
                                }
                                report(frame, "dynamics", norm2.sqrt());
                            }
                            k += c.comps.len();
                        }
                    }

                    if !b.length_free {
                        i0[1] = 0.0;
                        i1[1] = 0.0;
                    }
                    derivs.push(Deriv::Node {
                        intr: GeneralizedBelief { mu: i0, mu_prime: i1 },
                        extr: GeneralizedBelief { mu: e0, mu_prime: e1 },
                    });
                }
                BlockRef::Root(p) => {
                    let pathway_name = self.pathways[p].name.clone();
                    let rb = self.pathways[p].root_block.as_ref().unwrap();
                    let mut e0 = rb.extr.mu_prime.clone();
                    let e1 = DVector::zeros(EXTR_DIM);
                    for (i, module) in self.modules.iter().enumerate() {
                        if module.parent.is_none() {
                            if let Some(edge) = edges.get(&(i, p)) {
                                let w3 = nalgebra::Vector3::new(
                                    edge.eps_w[0],
                                    edge.eps_w[1],
                                    edge.eps_w[2],
                                );
                                let g = edge.jac.wrt_parent.transpose() * w3;
                                for k in 0..EXTR_DIM {
                                    e0[k] += g[k];
                                }
                                terms.push(TermReport {
                                    module: "root".into(),
                                    pathway: pathway_name.clone(),
                                    frame: "extrinsic",
                                    source: "children",
                                    norm: g.norm(),
                                });
                            }
                        }
                    }
                    for ch in &rb.vision {
                        match obs.get(&ch.name) {
                            None => missing.push(ch.name.clone()),
                            Some(o) => {
                                let pred = DVector::from_iterator(
                                    ch.comps.len(),
                                    ch.comps.iter().map(|&c| rb.extr.mu[c]),
                                );
                                let e = PredictionError::new(o - pred, ch.precision.clone())?;
                                let w = e.weighted();
                                for (row, &c) in ch.comps.iter().enumerate() {
                                    e0[c] += w[row];
                                }
                                free_energy += e.energy();
                                terms.push(TermReport {
                                    module: "root".into(),
                                    pathway: pathway_name.clone(),
                                    frame: "extrinsic",
                                    source: "vision",
                                    norm: w.norm(),
                                });
                            }
                        }
                    }
                    if let Some(prior) = &rb.prior {
                        let e = PredictionError::new(
                            &rb.extr.mu - &prior.mean,
                            prior.precision.clone(),
                        )?;
                        let w = e.weighted();
                        e0 -= &w;
                        free_energy += e.energy();
                    }
                    derivs.push(Deriv::Root {
                        extr: GeneralizedBelief { mu: e0, mu_prime: e1 },
                    });
                }
            }
        }

        // integrate in the caller's order; blocks are independent
        for &k in order {
            match (refs[k], &derivs[k]) {
                (BlockRef::Node(m, p), Deriv::Node { intr, extr }) => {
                    let b = self.blocks[m][p].as_mut().unwrap();
                    b.intr.integrate(intr, dt);
                    b.extr.integrate(extr, dt);
                    if b.intr.mu[1] < 0.0 {
                        b.intr.mu[1] = 0.0;
                    }
                    if !(b.intr.is_finite() && b.extr.is_finite()) {
                        return Err(Error::NonFinite {
                            tick: 0,
                            path: format!(
                                "module '{}' pathway '{}'",
                                self.modules[m].name, self.pathways[p].name
                            ),
                        });
                    }
                }
                (BlockRef::Root(p), Deriv::Root { extr }) => {
                    let rb = self.pathways[p].root_block.as_mut().unwrap();
                    rb.extr.integrate(extr, dt);
                    if !rb.extr.is_finite() {
                        return Err(Error::NonFinite {
                            tick: 0,
                            path: format!("root block of pathway '{}'", self.pathways[p].name),
                        });
                    }
                }
                _ => unreachable!("refs and derivs are built together"),
            }
        }

        Ok(NetworkReport { free_energy, action_derivative: action, terms, missing })
    }
}
