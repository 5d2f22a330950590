//! Robot description and compilation into an immutable [`Linkage`].
//!
//! Soft divisions are normalized to the unit abscissa. Internally the
//! generalized coordinates of an angular strain mode are multiplied by the
//! division length, so that `q_int = s ⊙ q_phys` with `s = L` for angular
//! modes and `s = 1` for linear modes and joint coordinates. All solvers work
//! with internal coordinates; [`Linkage::to_physical`] scales back.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix6, Matrix6xX, Vector3};
use sha2::{Digest, Sha256};

use crate::error::{GvsError, Result};
use crate::joint::{Joint, JointControl, JointKind};
use crate::kinematics::KinematicsCache;
use crate::profile::Profile;
use crate::quadrature::GaussRule;
use crate::rod::{
    basis_eval, damping_tensor, screw_inertia, screw_stiffness, section_properties, CrossSection,
    Material, StrainBasisSpec, TensorOverride,
};
use crate::se3::{Pose, Twist, MAGNUS_NODES};

pub type LinkId = usize;

pub const DEFAULT_GAUSS_POINTS: usize = 5;

#[derive(Debug, Clone)]
pub struct SoftDivision {
    pub length: f64,
    pub section: CrossSection,
    pub material: Material,
    pub basis: StrainBasisSpec,
    pub gauss_points: usize,
    pub inertia_override: Option<TensorOverride>,
    pub stiffness_override: Option<TensorOverride>,
    pub damping_override: Option<TensorOverride>,
}

impl SoftDivision {
    pub fn new(length: f64, section: CrossSection, material: Material, basis: StrainBasisSpec) -> Self {
        Self {
            length,
            section,
            material,
            basis,
            gauss_points: DEFAULT_GAUSS_POINTS,
            inertia_override: None,
            stiffness_override: None,
            damping_override: None,
        }
    }

    pub fn with_gauss_points(mut self, n: usize) -> Self {
        self.gauss_points = n;
        self
    }

    pub fn dof(&self) -> usize {
        self.basis.dof()
    }

    pub fn inertia(&self, x: f64) -> Result<Matrix6<f64>> {
        let m = screw_inertia(&self.section, &self.material, x)?;
        Ok(match &self.inertia_override {
            Some(o) => o.apply(x, &m),
            None => m,
        })
    }

    pub fn stiffness(&self, x: f64) -> Result<Matrix6<f64>> {
        let k = screw_stiffness(&self.section, &self.material, x)?;
        Ok(match &self.stiffness_override {
            Some(o) => o.apply(x, &k),
            None => k,
        })
    }

    pub fn damping(&self, x: f64) -> Result<Matrix6<f64>> {
        let d = damping_tensor(&self.section, &self.material, x)?;
        Ok(match &self.damping_override {
            Some(o) => o.apply(x, &d),
            None => d,
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(GvsError::InvalidModel(format!(
                "division length must be positive, got {}",
                self.length
            )));
        }
        self.section.validate()?;
        self.material.validate()?;
        if self.gauss_points < self.basis.max_order() + 2 {
            return Err(GvsError::InvalidModel(format!(
                "{} Gauss points are too few for polynomial order {}",
                self.gauss_points,
                self.basis.max_order()
            )));
        }
        Ok(())
    }
}

/// Rigid body attached after a joint. Poses are relative to the joint frame;
/// `inertia` is the screw inertia about the CoM in the CoM frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidBody {
    pub length: f64,
    pub inertia: Matrix6<f64>,
    pub com: Pose,
    pub tip: Pose,
}

impl RigidBody {
    /// A straight rod of the given section and material along the local x axis.
    pub fn rod(length: f64, section: &CrossSection, material: &Material) -> Result<Self> {
        section.validate()?;
        material.validate()?;
        let rule = GaussRule::new(8);
        let rho = material.density;
        let (mut m, mut mx) = (0.0, 0.0);
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let p = section_properties(section, *x)?;
            m += w * length * rho * p.area;
            mx += w * length * rho * p.area * x * length;
        }
        let xc = if m > 0.0 { mx / m } else { 0.5 * length };
        let (mut jx, mut jy, mut jz) = (0.0, 0.0, 0.0);
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let p = section_properties(section, *x)?;
            let d = x * length - xc;
            let dl = w * length * rho;
            jx += dl * (p.iy + p.iz);
            jy += dl * (p.iy + p.area * d * d);
            jz += dl * (p.iz + p.area * d * d);
        }
        Ok(Self {
            length,
            inertia: Matrix6::from_diagonal(&nalgebra::Vector6::new(jx, jy, jz, m, m, m)),
            com: Pose::from_translation(Vector3::new(xc, 0.0, 0.0)),
            tip: Pose::from_translation(Vector3::new(length, 0.0, 0.0)),
        })
    }

    /// A massless body of the given length (useful for pure kinematic links).
    pub fn massless(length: f64) -> Self {
        Self {
            length,
            inertia: Matrix6::zeros(),
            com: Pose::from_translation(Vector3::new(0.5 * length, 0.0, 0.0)),
            tip: Pose::from_translation(Vector3::new(length, 0.0, 0.0)),
        }
    }

    pub fn mass(&self) -> f64 {
        self.inertia[(3, 3)]
    }

    /// Body point at abscissa `x`: the tip at `x = 1`, else along the local x axis.
    pub fn point(&self, x: f64) -> Pose {
        if x == 1.0 {
            self.tip
        } else {
            Pose::from_translation(Vector3::new(x * self.length, 0.0, 0.0))
        }
    }

    fn validate(&self) -> Result<()> {
        let sym = (self.inertia - self.inertia.transpose()).abs().max();
        let psd = self
            .inertia
            .symmetric_eigenvalues()
            .iter()
            .all(|e| *e >= -1e-12 * self.inertia.abs().max());
        if sym > 1e-12 * self.inertia.abs().max().max(1.0) || !psd {
            return Err(GvsError::InvalidModel(
                "rigid body inertia must be symmetric positive semidefinite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum LinkBody {
    Rigid(RigidBody),
    Soft(Vec<SoftDivision>),
}

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub parent: Option<LinkId>,
    /// Constant transform from the parent tip (or ground) to the joint frame.
    pub offset: Pose,
    pub joint: Joint,
    pub body: LinkBody,
}

impl Link {
    pub fn length(&self) -> f64 {
        match &self.body {
            LinkBody::Rigid(r) => r.length,
            LinkBody::Soft(d) => d.iter().map(|d| d.length).sum(),
        }
    }

    pub fn is_soft(&self) -> bool {
        matches!(self.body, LinkBody::Soft(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadFrame {
    /// Fixed in the body frame at the application point.
    Follower,
    /// Fixed in the inertial frame.
    Dead,
}

#[derive(Debug, Clone)]
pub struct PointLoad {
    pub link: LinkId,
    pub x: f64,
    /// Wrench, moment first.
    pub wrench: Twist,
    pub frame: LoadFrame,
    pub profile: Profile,
    pub(crate) point: usize,
}

/// Tendon routed through a contiguous span of divisions of one soft link.
/// Offsets are polynomials (ascending powers) of the span-normalized abscissa.
#[derive(Debug, Clone, PartialEq)]
pub struct Cable {
    pub name: String,
    pub link: LinkId,
    /// Division indices within the link covered by the cable.
    pub divisions: Range<usize>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub max_tension: f64,
    /// Skip the inside-the-section check (cables routed outside thin sections).
    pub allow_outside: bool,
}

impl Cable {
    /// Offset `(0, y, z)` and its derivative with respect to the span abscissa.
    pub fn offset(&self, x: f64) -> (Vector3<f64>, Vector3<f64>) {
        let (y, dy) = poly(&self.y, x);
        let (z, dz) = poly(&self.z, x);
        (Vector3::new(0.0, y, z), Vector3::new(0.0, dy, dz))
    }
}

fn poly(c: &[f64], x: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for a in c.iter().rev() {
        d = d * x + v;
        v = v * x + a;
    }
    (v, d)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Actuator {
    /// Effort on one coordinate of a wrench-controlled joint.
    Joint { link: LinkId, index: usize },
    Cable(Cable),
}

impl Actuator {
    pub fn upper_bound(&self) -> f64 {
        match self {
            Actuator::Joint { .. } => f64::INFINITY,
            Actuator::Cable(c) => c.max_tension,
        }
    }

    pub fn lower_bound(&self) -> f64 {
        match self {
            Actuator::Joint { .. } => f64::NEG_INFINITY,
            Actuator::Cable(_) => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactProxy {
    pub link: LinkId,
    pub x: f64,
    pub radius: f64,
    pub(crate) point: usize,
}

impl ContactProxy {
    /// Sphere of `radius` centered at link abscissa `x`.
    pub fn new(link: LinkId, x: f64, radius: f64) -> Self {
        Self {
            link,
            x,
            radius,
            point: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContactTarget {
    Fixed { center: Vector3<f64>, radius: f64 },
    /// Sphere carried by a link; `point` is resolved when the linkage is compiled.
    Body { link: LinkId, x: f64, radius: f64, point: usize },
}

impl ContactTarget {
    pub fn body(link: LinkId, x: f64, radius: f64) -> Self {
        ContactTarget::Body {
            link,
            x,
            radius,
            point: usize::MAX,
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            ContactTarget::Fixed { radius, .. } | ContactTarget::Body { radius, .. } => *radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactPair {
    pub proxies: Vec<ContactProxy>,
    pub target: ContactTarget,
    pub stiffness: f64,
    pub damping: f64,
}

/// Attachment of one side of a loop closure; `link == None` is the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureSide {
    pub link: Option<LinkId>,
    pub x: f64,
}

#[derive(Debug, Clone)]
pub struct Closure {
    pub a: ClosureSide,
    pub b: ClosureSide,
    pub joint: Joint,
    /// Frame of side `b` relative to side `a` when the closure is assembled.
    pub offset: Pose,
    /// Rows spanning the constrained screw directions.
    pub projector: DMatrix<f64>,
    pub(crate) points: [Option<usize>; 2],
}

impl Closure {
    pub fn constraint_count(&self) -> usize {
        self.projector.nrows()
    }
}

/// Context passed to custom force hooks.
pub struct HookContext<'a> {
    pub linkage: &'a Linkage,
    pub kin: &'a KinematicsCache,
    pub t: f64,
    pub q: &'a DVector<f64>,
    pub qd: &'a DVector<f64>,
}

pub type ForceHookFn = dyn Fn(&HookContext<'_>) -> Result<DVector<f64>> + Send + Sync;

/// Named custom generalized-force hook.
#[derive(Clone)]
pub struct ForceHook {
    pub name: String,
    pub f: Arc<ForceHookFn>,
}

impl ForceHook {
    pub fn new(
        name: &str,
        f: impl Fn(&HookContext<'_>) -> Result<DVector<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.to_string(),
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for ForceHook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ForceHook({})", self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    /// Joint frame at the start of a link.
    Base,
    Gauss,
    DivisionEnd,
    /// Extra abscissa inserted for loads, closures, contacts or outputs.
    Extra,
    RigidCom,
    RigidTip,
    RigidPoint,
}

#[derive(Debug, Clone)]
pub struct EvalPoint {
    pub link: LinkId,
    /// Global division index for soft points.
    pub division: Option<usize>,
    /// Division-local abscissa (soft) or rigid link abscissa.
    pub x: f64,
    /// Link abscissa in `[0, 1]`.
    pub link_x: f64,
    /// Arc length from the link base (m).
    pub arc: f64,
    pub kind: PointKind,
    /// Lumped screw inertia: quadrature weight times the cross-section tensor,
    /// or the rigid body inertia at its CoM.
    pub inertia: Matrix6<f64>,
    /// Internal basis `Φ̂` and reference strain `ξ̂*` at soft points.
    pub(crate) basis: Option<(Matrix6xX<f64>, Twist)>,
    /// Physical quadrature weight (m) for soft Gauss points, else 0.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct DivisionInfo {
    pub link: LinkId,
    pub index: usize,
    pub q: Range<usize>,
    pub arc_start: f64,
    pub spec: SoftDivision,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    /// Restart from a stored point (or ground) followed by a constant transform.
    Load { from: Option<usize>, offset: Pose },
    Joint { q: Range<usize>, phi: Matrix6xX<f64> },
    Magnus {
        q: Range<usize>,
        h: f64,
        phi_a: Matrix6xX<f64>,
        phi_b: Matrix6xX<f64>,
        xi_a: Twist,
        xi_b: Twist,
    },
    Store(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prescribed {
    pub index: usize,
    pub value: f64,
    pub profile: Profile,
}

#[derive(Debug, Clone)]
pub struct LinkageBuilder {
    links: Vec<Link>,
    gravity: Vector3<f64>,
    loads: Vec<PointLoad>,
    cables: Vec<Cable>,
    contacts: Vec<ContactPair>,
    closures: Vec<(ClosureSide, ClosureSide, Joint, Option<Pose>)>,
    hooks: Vec<ForceHook>,
    extra_points: Vec<(LinkId, f64)>,
    normalize: bool,
    baumgarte: (f64, f64),
}

impl Default for LinkageBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl LinkageBuilder {
    pub fn new() -> Self {
        Self {
            links: Vec::new(),
            gravity: Vector3::zeros(),
            loads: Vec::new(),
            cables: Vec::new(),
            contacts: Vec::new(),
            closures: Vec::new(),
            hooks: Vec::new(),
            extra_points: Vec::new(),
            normalize: true,
            baumgarte: (20.0, 20.0),
        }
    }

    pub fn gravity(&mut self, g: Vector3<f64>) -> &mut Self {
        self.gravity = g;
        self
    }

    /// Toggle length normalization of angular strain coordinates.
    pub fn normalize(&mut self, on: bool) -> &mut Self {
        self.normalize = on;
        self
    }

    pub fn baumgarte(&mut self, alpha: f64, beta: f64) -> &mut Self {
        self.baumgarte = (alpha, beta);
        self
    }

    pub fn link_id(&self, name: &str) -> Result<LinkId> {
        self.links
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| GvsError::UnknownLink(name.to_string()))
    }

    pub fn link(&self, id: LinkId) -> Option<&Link> {
        self.links.get(id)
    }

    pub fn add_link(&mut self, link: Link) -> Result<LinkId> {
        if let Some(p) = link.parent {
            if p >= self.links.len() {
                return Err(GvsError::UnknownLink(format!("#{p}")));
            }
        }
        if self.links.iter().any(|l| l.name == link.name) {
            return Err(GvsError::DuplicateLink(link.name));
        }
        link.joint.validate()?;
        match &link.body {
            LinkBody::Rigid(r) => r.validate()?,
            LinkBody::Soft(divs) => {
                if divs.is_empty() {
                    return Err(GvsError::InvalidModel(format!(
                        "soft link '{}' has no divisions",
                        link.name
                    )));
                }
                for d in divs {
                    d.validate()?;
                }
            }
        }
        self.links.push(link);
        Ok(self.links.len() - 1)
    }

    pub fn add_rigid_link(
        &mut self,
        name: &str,
        parent: Option<LinkId>,
        joint: Joint,
        body: RigidBody,
    ) -> Result<LinkId> {
        self.add_link(Link {
            name: name.to_string(),
            parent,
            offset: Pose::identity(),
            joint,
            body: LinkBody::Rigid(body),
        })
    }

    pub fn add_soft_link(
        &mut self,
        name: &str,
        parent: Option<LinkId>,
        joint: Joint,
        divisions: Vec<SoftDivision>,
    ) -> Result<LinkId> {
        self.add_link(Link {
            name: name.to_string(),
            parent,
            offset: Pose::identity(),
            joint,
            body: LinkBody::Soft(divisions),
        })
    }

    pub fn set_offset(&mut self, link: LinkId, offset: Pose) -> Result<()> {
        let l = self
            .links
            .get_mut(link)
            .ok_or_else(|| GvsError::UnknownLink(format!("#{link}")))?;
        l.offset = offset;
        Ok(())
    }

    fn check_x(&self, link: LinkId, x: f64) -> Result<()> {
        if link >= self.links.len() {
            return Err(GvsError::UnknownLink(format!("#{link}")));
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(GvsError::AbscissaOutOfRange(x));
        }
        Ok(())
    }

    /// Request an evaluation point (for output or custom hooks).
    pub fn add_output_point(&mut self, link: LinkId, x: f64) -> Result<()> {
        self.check_x(link, x)?;
        self.extra_points.push((link, x));
        Ok(())
    }

    pub fn add_point_load(
        &mut self,
        link: LinkId,
        x: f64,
        wrench: Twist,
        frame: LoadFrame,
        profile: Profile,
    ) -> Result<usize> {
        self.check_x(link, x)?;
        if wrench.iter().any(|v| !v.is_finite()) {
            return Err(GvsError::InvalidModel("non-finite point wrench".into()));
        }
        self.loads.push(PointLoad {
            link,
            x,
            wrench,
            frame,
            profile,
            point: usize::MAX,
        });
        Ok(self.loads.len() - 1)
    }

    /// Register a cable; returns its position among cables.
    pub fn add_cable(&mut self, cable: Cable) -> Result<usize> {
        let link = self
            .links
            .get(cable.link)
            .ok_or_else(|| GvsError::UnknownLink(format!("#{}", cable.link)))?;
        let LinkBody::Soft(divs) = &link.body else {
            return Err(GvsError::InvalidModel(format!(
                "cable '{}' must run through a soft link",
                cable.name
            )));
        };
        if cable.divisions.is_empty() || cable.divisions.end > divs.len() {
            return Err(GvsError::InvalidModel(format!(
                "cable '{}' division span {:?} is invalid",
                cable.name, cable.divisions
            )));
        }
        if !(cable.max_tension > 0.0) {
            return Err(GvsError::InvalidModel(format!(
                "cable '{}' needs a positive tension bound",
                cable.name
            )));
        }
        self.cables.push(cable);
        Ok(self.cables.len() - 1)
    }

    pub fn add_contact(&mut self, pair: ContactPair) -> Result<()> {
        if pair.proxies.is_empty() {
            return Err(GvsError::InvalidModel("contact pair without proxies".into()));
        }
        for p in &pair.proxies {
            self.check_x(p.link, p.x)?;
            if !(p.radius > 0.0) {
                return Err(GvsError::InvalidModel("contact radius must be positive".into()));
            }
        }
        if let ContactTarget::Body { link, x, .. } = pair.target {
            self.check_x(link, x)?;
        }
        if !(pair.target.radius() > 0.0) || pair.stiffness < 0.0 || pair.damping < 0.0 {
            return Err(GvsError::InvalidModel("invalid contact parameters".into()));
        }
        self.contacts.push(pair);
        Ok(())
    }

    /// Register a loop closure between two attachment points. With `offset`
    /// unset, the relative pose at the reference configuration is used.
    pub fn add_loop_closure(
        &mut self,
        a: ClosureSide,
        b: ClosureSide,
        joint: Joint,
        offset: Option<Pose>,
    ) -> Result<usize> {
        for s in [&a, &b] {
            match s.link {
                Some(l) => self.check_x(l, s.x)?,
                None if s.x != 0.0 => return Err(GvsError::AbscissaOutOfRange(s.x)),
                None => {}
            }
        }
        if a == b {
            return Err(GvsError::InvalidModel(
                "loop closure between a link and itself at the same point".into(),
            ));
        }
        if b.link.is_none() {
            return Err(GvsError::InvalidModel(
                "the second side of a loop closure must be a link".into(),
            ));
        }
        joint.validate()?;
        if joint.dof() == 6 {
            return Err(GvsError::InvalidModel("a free loop joint constrains nothing".into()));
        }
        self.closures.push((a, b, joint, offset));
        Ok(self.closures.len() - 1)
    }

    pub fn add_force_hook(&mut self, hook: ForceHook) {
        self.hooks.push(hook);
    }

    pub fn finalize(self) -> Result<Linkage> {
        Linkage::compile(self)
    }
}

/// Immutable compiled robot.
#[derive(Debug, Clone)]
pub struct Linkage {
    pub(crate) links: Vec<Link>,
    pub(crate) divisions: Vec<DivisionInfo>,
    pub(crate) points: Vec<EvalPoint>,
    pub(crate) program: Vec<Op>,
    pub(crate) link_base: Vec<usize>,
    pub(crate) link_tip: Vec<usize>,
    pub(crate) joint_q: Vec<Range<usize>>,
    pub(crate) link_divisions: Vec<Range<usize>>,
    pub(crate) scale: DVector<f64>,
    pub(crate) k: DMatrix<f64>,
    pub(crate) d: DMatrix<f64>,
    pub(crate) gravity: Vector3<f64>,
    pub(crate) loads: Vec<PointLoad>,
    pub(crate) actuators: Vec<Actuator>,
    pub(crate) contacts: Vec<ContactPair>,
    pub(crate) closures: Vec<Closure>,
    pub(crate) hooks: Vec<ForceHook>,
    pub(crate) prescribed: Vec<Prescribed>,
    pub(crate) free: Vec<usize>,
    pub(crate) baumgarte: (f64, f64),
    pub(crate) normalized: bool,
}

struct PointRequest {
    link: LinkId,
    x: f64,
}

impl Linkage {
    fn compile(b: LinkageBuilder) -> Result<Linkage> {
        let mut requests: Vec<PointRequest> = b
            .extra_points
            .iter()
            .map(|&(link, x)| PointRequest { link, x })
            .collect();
        requests.extend(b.loads.iter().map(|l| PointRequest { link: l.link, x: l.x }));
        for c in &b.contacts {
            requests.extend(c.proxies.iter().map(|p| PointRequest { link: p.link, x: p.x }));
            if let ContactTarget::Body { link, x, .. } = c.target {
                requests.push(PointRequest { link, x });
            }
        }
        for (a, bb, _, _) in &b.closures {
            for s in [a, bb] {
                if let Some(link) = s.link {
                    requests.push(PointRequest { link, x: s.x });
                }
            }
        }

        // DoF map in tree order: joint coordinates, then divisions.
        let mut n = 0;
        let mut joint_q = Vec::new();
        let mut divisions = Vec::new();
        let mut link_divisions = Vec::new();
        let mut scale = Vec::new();
        let mut prescribed = Vec::new();
        let mut actuators = Vec::new();
        for (id, link) in b.links.iter().enumerate() {
            let nj = link.joint.dof();
            joint_q.push(n..n + nj);
            match &link.joint.control {
                JointControl::Coordinate(p) => {
                    for (i, (value, profile)) in p.iter().enumerate() {
                        prescribed.push(Prescribed {
                            index: n + i,
                            value: *value,
                            profile: profile.clone(),
                        });
                    }
                }
                JointControl::Wrench => {
                    for i in 0..nj {
                        actuators.push(Actuator::Joint { link: id, index: n + i });
                    }
                }
                JointControl::Passive => {}
            }
            scale.extend(std::iter::repeat_n(1.0, nj));
            n += nj;
            let first = divisions.len();
            if let LinkBody::Soft(divs) = &link.body {
                let mut arc = 0.0;
                for (i, d) in divs.iter().enumerate() {
                    let nd = d.dof();
                    for m in d.basis.column_modes() {
                        scale.push(if b.normalize && m.is_angular() { d.length } else { 1.0 });
                    }
                    divisions.push(DivisionInfo {
                        link: id,
                        index: i,
                        q: n..n + nd,
                        arc_start: arc,
                        spec: d.clone(),
                    });
                    arc += d.length;
                    n += nd;
                }
            }
            link_divisions.push(first..divisions.len());
        }
        actuators.extend(b.cables.into_iter().map(Actuator::Cable));
        let scale = DVector::from_vec(scale);

        // Stiffness and damping.
        let mut k = DMatrix::zeros(n, n);
        let mut d = DMatrix::zeros(n, n);
        for div in &divisions {
            let spec = &div.spec;
            let rule = GaussRule::new(spec.gauss_points.max(spec.basis.max_order() + 3));
            let s = scale.rows(div.q.start, div.q.len()).map(|v| 1.0 / v);
            let sd = nalgebra::DMatrix::from_diagonal(&s);
            let nd = div.q.len();
            let mut kb = DMatrix::zeros(nd, nd);
            let mut db = DMatrix::zeros(nd, nd);
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let (phi, _) = basis_eval(&spec.basis, *x);
                let phi = phi * &sd;
                let sig = spec.stiffness(*x)?;
                let ups = spec.damping(*x)?;
                kb += phi.transpose() * sig * &phi * (w * spec.length);
                db += phi.transpose() * ups * &phi * (w * spec.length);
            }
            k.view_mut((div.q.start, div.q.start), (nd, nd)).copy_from(&kb);
            d.view_mut((div.q.start, div.q.start), (nd, nd)).copy_from(&db);
        }
        for (link, r) in b.links.iter().zip(&joint_q) {
            for (i, qi) in r.clone().enumerate() {
                if let Some(v) = link.joint.stiffness.get(i) {
                    k[(qi, qi)] += v;
                }
                if let Some(v) = link.joint.damping.get(i) {
                    d[(qi, qi)] += v;
                }
            }
        }
        let k = (&k + k.transpose()) * 0.5;
        let d = (&d + d.transpose()) * 0.5;

        // Evaluation points and the kinematic program.
        let mut points: Vec<EvalPoint> = Vec::new();
        let mut program = Vec::new();
        let mut link_base = Vec::new();
        let mut link_tip = Vec::new();
        for (id, link) in b.links.iter().enumerate() {
            let from = link.parent.map(|p| link_tip[p]);
            program.push(Op::Load {
                from,
                offset: link.offset,
            });
            let jr = joint_q[id].clone();
            if !jr.is_empty() {
                program.push(Op::Joint {
                    q: jr,
                    phi: link.joint.screw_basis(),
                });
            }
            let base = points.len();
            link_base.push(base);
            let push = |points: &mut Vec<EvalPoint>, p: EvalPoint| {
                points.push(p);
                points.len() - 1
            };
            let mk = |division, x, link_x, arc, kind, inertia, basis, weight| EvalPoint {
                link: id,
                division,
                x,
                link_x,
                arc,
                kind,
                inertia,
                basis,
                weight,
            };
            match &link.body {
                LinkBody::Rigid(body) => {
                    push(&mut points, mk(None, 0.0, 0.0, 0.0, PointKind::Base, Matrix6::zeros(), None, 0.0));
                    program.push(Op::Store(base));
                    let mut xs: Vec<f64> = requests
                        .iter()
                        .filter(|r| r.link == id && r.x > 0.0 && r.x < 1.0)
                        .map(|r| r.x)
                        .collect();
                    xs.sort_by(f64::total_cmp);
                    xs.dedup();
                    let com = push(
                        &mut points,
                        mk(None, f64::NAN, f64::NAN, f64::NAN, PointKind::RigidCom, body.inertia, None, 0.0),
                    );
                    program.push(Op::Load { from: Some(base), offset: body.com });
                    program.push(Op::Store(com));
                    for x in xs {
                        let p = push(
                            &mut points,
                            mk(None, x, x, x * body.length, PointKind::RigidPoint, Matrix6::zeros(), None, 0.0),
                        );
                        program.push(Op::Load { from: Some(base), offset: body.point(x) });
                        program.push(Op::Store(p));
                    }
                    let tip = push(
                        &mut points,
                        mk(None, 1.0, 1.0, body.length, PointKind::RigidTip, Matrix6::zeros(), None, 0.0),
                    );
                    program.push(Op::Load { from: Some(base), offset: body.tip });
                    program.push(Op::Store(tip));
                    link_tip.push(tip);
                }
                LinkBody::Soft(divs) => {
                    let total = link.length();
                    let first_div = link_divisions[id].start;
                    let base_basis = Some(division_basis(&divisions[first_div], &scale, 0.0));
                    push(
                        &mut points,
                        mk(Some(first_div), 0.0, 0.0, 0.0, PointKind::Base, Matrix6::zeros(), base_basis, 0.0),
                    );
                    program.push(Op::Store(base));
                    let mut last = base;
                    for (i, _) in divs.iter().enumerate() {
                        let gd = first_div + i;
                        let info = &divisions[gd];
                        let spec = &info.spec;
                        let (a0, a1) = (info.arc_start, info.arc_start + spec.length);
                        let rule = GaussRule::new(spec.gauss_points);
                        // (x, weight, kind)
                        let mut xs: Vec<(f64, f64, PointKind)> = rule
                            .nodes
                            .iter()
                            .zip(&rule.weights)
                            .map(|(x, w)| (*x, *w, PointKind::Gauss))
                            .collect();
                        for r in requests.iter().filter(|r| r.link == id) {
                            let arc = r.x * total;
                            if arc > a0 + 1e-12 * total && arc < a1 - 1e-12 * total {
                                xs.push(((arc - a0) / spec.length, 0.0, PointKind::Extra));
                            }
                        }
                        xs.push((1.0, 0.0, PointKind::DivisionEnd));
                        xs.sort_by(|a, b| a.0.total_cmp(&b.0));
                        xs.dedup_by(|b, a| {
                            if (a.0 - b.0).abs() < 1e-14 {
                                if b.2 == PointKind::Gauss {
                                    *a = *b;
                                }
                                true
                            } else {
                                false
                            }
                        });
                        let mut x_prev = 0.0;
                        for (x, w, kind) in xs {
                            let h = x - x_prev;
                            let xa = x_prev + h * MAGNUS_NODES[0];
                            let xb = x_prev + h * MAGNUS_NODES[1];
                            let (phi_a, xi_a) = division_basis(info, &scale, xa);
                            let (phi_b, xi_b) = division_basis(info, &scale, xb);
                            program.push(Op::Magnus {
                                q: info.q.clone(),
                                h,
                                phi_a,
                                phi_b,
                                xi_a,
                                xi_b,
                            });
                            let inertia = if w > 0.0 {
                                spec.inertia(x)? * (w * spec.length)
                            } else {
                                Matrix6::zeros()
                            };
                            let arc = a0 + x * spec.length;
                            let p = push(
                                &mut points,
                                mk(
                                    Some(gd),
                                    x,
                                    arc / total,
                                    arc,
                                    kind,
                                    inertia,
                                    Some(division_basis(info, &scale, x)),
                                    w * spec.length,
                                ),
                            );
                            program.push(Op::Store(p));
                            last = p;
                            x_prev = x;
                        }
                    }
                    link_tip.push(last);
                }
            }
        }

        let mut linkage = Linkage {
            links: b.links,
            divisions,
            points,
            program,
            link_base,
            link_tip,
            joint_q,
            link_divisions,
            scale,
            k,
            d,
            gravity: b.gravity,
            loads: b.loads,
            actuators,
            contacts: b.contacts,
            closures: Vec::new(),
            hooks: b.hooks,
            free: Vec::new(),
            prescribed,
            baumgarte: b.baumgarte,
            normalized: b.normalize,
        };
        linkage.free = (0..n)
            .filter(|i| !linkage.prescribed.iter().any(|p| p.index == *i))
            .collect();

        for l in &mut linkage.loads {
            l.point = find_point(&linkage.points, &linkage.link_tip, l.link, l.x)?;
        }
        let mut contacts = std::mem::take(&mut linkage.contacts);
        for c in &mut contacts {
            for p in &mut c.proxies {
                p.point = linkage.point_at(p.link, p.x)?;
            }
            if let ContactTarget::Body { link, x, point, .. } = &mut c.target {
                *point = linkage.point_at(*link, *x)?;
            }
        }
        linkage.contacts = contacts;

        for a in &linkage.actuators {
            if let Actuator::Cable(c) = a {
                linkage.check_cable(c)?;
            }
        }

        let q0 = DVector::zeros(n);
        let kin0 = crate::kinematics::forward_kinematics(&linkage, &q0)?;
        for (a, bb, joint, offset) in b.closures {
            let pa = a.link.map(|l| linkage.point_at(l, a.x)).transpose()?;
            let pb = bb.link.map(|l| linkage.point_at(l, bb.x)).transpose()?;
            let ga = pa.map(|p| kin0[p]).unwrap_or_default();
            let gb = pb.map(|p| kin0[p]).unwrap_or_default();
            let offset = offset.unwrap_or_else(|| ga.inverse() * gb);
            linkage.closures.push(Closure {
                a,
                b: bb,
                projector: constraint_projector(&joint.screw_basis()),
                joint,
                offset,
                points: [pa, pb],
            });
        }
        Ok(linkage)
    }

    /// Index of the evaluation point at link abscissa `x`.
    pub fn point_at(&self, link: LinkId, x: f64) -> Result<usize> {
        find_point(&self.points, &self.link_tip, link, x)
    }

    fn check_cable(&self, c: &Cable) -> Result<()> {
        if c.allow_outside {
            return Ok(());
        }
        let span = self.cable_span(c);
        for (pi, p) in self.points.iter().enumerate() {
            if let Some(xs) = self.cable_abscissa(c, &span, pi) {
                let div = &self.divisions[p.division.unwrap()];
                let (d, _) = c.offset(xs);
                let r = div.spec.section.bounding_radius(p.x);
                if d.norm() >= r {
                    return Err(GvsError::InvalidModel(format!(
                        "cable '{}' leaves the cross-section at span abscissa {xs:.4}",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Arc-length start and length of a cable's span.
    pub(crate) fn cable_span(&self, c: &Cable) -> (f64, f64) {
        let divs = &self.divisions[self.link_divisions[c.link].clone()];
        let start = divs[c.divisions.start].arc_start;
        let len: f64 = divs[c.divisions.clone()].iter().map(|d| d.spec.length).sum();
        (start, len)
    }

    /// Span-normalized abscissa of a Gauss point inside the cable span.
    pub(crate) fn cable_abscissa(&self, c: &Cable, span: &(f64, f64), point: usize) -> Option<f64> {
        let p = &self.points[point];
        if p.kind != PointKind::Gauss || p.link != c.link {
            return None;
        }
        let div = &self.divisions[p.division?];
        if !c.divisions.contains(&div.index) {
            return None;
        }
        Some((p.arc - span.0) / span.1)
    }

    pub fn dof(&self) -> usize {
        self.scale.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link_id(&self, name: &str) -> Result<LinkId> {
        self.links
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| GvsError::UnknownLink(name.to_string()))
    }

    pub fn divisions(&self) -> &[DivisionInfo] {
        &self.divisions
    }

    pub fn points(&self) -> &[EvalPoint] {
        &self.points
    }

    pub fn tip_point(&self, link: LinkId) -> usize {
        self.link_tip[link]
    }

    pub fn base_point(&self, link: LinkId) -> usize {
        self.link_base[link]
    }

    /// Coordinates owned by a link's joint.
    pub fn joint_coordinates(&self, link: LinkId) -> Range<usize> {
        self.joint_q[link].clone()
    }

    /// Coordinates owned by the divisions of a link.
    pub fn strain_coordinates(&self, link: LinkId) -> Range<usize> {
        let r = self.link_divisions[link].clone();
        if r.is_empty() {
            let e = self.joint_q[link].end;
            return e..e;
        }
        self.divisions[r.start].q.start..self.divisions[r.end - 1].q.end
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn damping(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    pub fn with_gravity(&self, g: Vector3<f64>) -> Linkage {
        let mut l = self.clone();
        l.gravity = g;
        l
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Internal-per-physical coordinate factors `s`.
    pub fn scale(&self) -> &DVector<f64> {
        &self.scale
    }

    pub fn to_physical(&self, q_int: &DVector<f64>) -> DVector<f64> {
        q_int.component_div(&self.scale)
    }

    pub fn to_internal(&self, q_phys: &DVector<f64>) -> DVector<f64> {
        q_phys.component_mul(&self.scale)
    }

    pub fn loads(&self) -> &[PointLoad] {
        &self.loads
    }

    pub fn actuators(&self) -> &[Actuator] {
        &self.actuators
    }

    pub fn actuator_count(&self) -> usize {
        self.actuators.len()
    }

    /// Replace the path and bound of the `i`-th cable, keeping everything else.
    pub fn with_cable(&self, i: usize, cable: Cable) -> Result<Linkage> {
        let mut l = self.clone();
        let idx = l
            .actuators
            .iter()
            .enumerate()
            .filter(|(_, a)| matches!(a, Actuator::Cable(_)))
            .nth(i)
            .map(|(k, _)| k)
            .ok_or_else(|| GvsError::InvalidModel(format!("no cable #{i}")))?;
        l.check_cable(&cable)?;
        l.actuators[idx] = Actuator::Cable(cable);
        Ok(l)
    }

    pub fn cables(&self) -> impl Iterator<Item = &Cable> {
        self.actuators.iter().filter_map(|a| match a {
            Actuator::Cable(c) => Some(c),
            _ => None,
        })
    }

    pub fn contacts(&self) -> &[ContactPair] {
        &self.contacts
    }

    pub fn closures(&self) -> &[Closure] {
        &self.closures
    }

    pub fn constraint_count(&self) -> usize {
        self.closures.iter().map(|c| c.constraint_count()).sum()
    }

    pub fn hooks(&self) -> &[ForceHook] {
        &self.hooks
    }

    pub fn prescribed(&self) -> &[Prescribed] {
        &self.prescribed
    }

    /// Indices of the coordinates solved for (not prescribed).
    pub fn free_coordinates(&self) -> &[usize] {
        &self.free
    }

    pub fn baumgarte_gains(&self) -> (f64, f64) {
        self.baumgarte
    }

    /// Prescribed coordinate values, rates and accelerations at time `t`,
    /// with the values scaled by `factor`.
    pub fn prescribed_state(&self, t: f64, factor: f64) -> Vec<(usize, [f64; 3])> {
        self.prescribed
            .iter()
            .map(|p| {
                let [v, dv, ddv] = p.profile.eval(t);
                (p.index, [factor * p.value * v, p.value * dv, p.value * ddv])
            })
            .collect()
    }

    /// Joint coordinates that are exponential coordinates of a rotation
    /// (spherical and free joints), as `(first index, kind)`.
    pub fn rotation_charts(&self) -> Vec<(usize, JointKind)> {
        self.links
            .iter()
            .zip(&self.joint_q)
            .filter(|(l, _)| l.joint.kind.has_rotation_chart())
            .filter(|(l, _)| !matches!(l.joint.control, JointControl::Coordinate(_)))
            .map(|(l, r)| (r.start, l.joint.kind))
            .collect()
    }

    /// Total mass carried by all evaluation points.
    pub fn total_mass(&self) -> f64 {
        self.points.iter().map(|p| p.inertia[(3, 3)]).sum()
    }

    /// SHA-256 over the compiled structure and the bits of K and D.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dof() as u64).to_le_bytes());
        for l in &self.links {
            h.update(l.name.as_bytes());
            h.update([0u8]);
        }
        for m in [&self.k, &self.d] {
            for v in m.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        for p in &self.points {
            h.update(p.link_x.to_bits().to_le_bytes());
            for v in p.inertia.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        for v in self.gravity.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn division_basis(info: &DivisionInfo, scale: &DVector<f64>, x: f64) -> (Matrix6xX<f64>, Twist) {
    let (mut phi, xi) = basis_eval(&info.spec.basis, x);
    let l = info.spec.length;
    for (c, qi) in info.q.clone().enumerate() {
        let f = l / scale[qi];
        phi.column_mut(c).scale_mut(f);
    }
    (phi, xi * l)
}

fn find_point(points: &[EvalPoint], tips: &[usize], link: LinkId, x: f64) -> Result<usize> {
    if link >= tips.len() {
        return Err(GvsError::UnknownLink(format!("#{link}")));
    }
    if x == 1.0 {
        return Ok(tips[link]);
    }
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.link == link && p.kind != PointKind::RigidCom)
        .min_by(|a, b| (a.1.link_x - x).abs().total_cmp(&(b.1.link_x - x).abs()))
        .filter(|(_, p)| (p.link_x - x).abs() < 1e-9)
        .map(|(i, _)| i)
        .ok_or(GvsError::AbscissaOutOfRange(x))
}

/// Orthonormal rows spanning the complement of the allowed screws.
pub fn constraint_projector(allowed: &Matrix6xX<f64>) -> DMatrix<f64> {
    let k = allowed.ncols();
    let mut rows: Vec<nalgebra::Vector6<f64>> = Vec::new();
    let mut basis: Vec<nalgebra::Vector6<f64>> = allowed
        .column_iter()
        .map(|c| c.into_owned())
        .collect();
    // Gram–Schmidt of the allowed columns first, then the unit vectors.
    let mut ortho: Vec<nalgebra::Vector6<f64>> = Vec::new();
    for v in basis.drain(..) {
        let mut w = v;
        for o in &ortho {
            w -= o * o.dot(&w);
        }
        if w.norm() > 1e-12 {
            ortho.push(w.normalize());
        }
    }
    for i in 0..6 {
        let mut w = nalgebra::Vector6::<f64>::zeros();
        w[i] = 1.0;
        for o in ortho.iter().chain(rows.iter()) {
            w -= o * o.dot(&w);
        }
        if w.norm() > 1e-9 {
            rows.push(w.normalize());
        }
    }
    debug_assert_eq!(rows.len(), 6 - k);
    DMatrix::from_fn(rows.len(), 6, |r, c| rows[r][c])
}
