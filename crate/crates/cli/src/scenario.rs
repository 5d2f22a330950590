//! Declarative scenario files: model description plus solver blocks.
//!
//! Files are TOML in SI units. Unknown keys are collected while parsing;
//! strict mode turns them into errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

fn yes() -> bool {
    true
}

fn is_true(v: &bool) -> bool {
    *v
}

fn is_false(v: &bool) -> bool {
    !*v
}

fn is_zero3(v: &[f64; 3]) -> bool {
    *v == [0.0; 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "is_zero3")]
    pub gravity: [f64; 3],
    /// Length normalization of angular strain coordinates.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub normalize: bool,
    /// Baumgarte gains `(α, β)` for loop closures in dynamics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baumgarte: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub materials: BTreeMap<String, MaterialSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sections: BTreeMap<String, SectionSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkSpec>,
    /// Extra output points reported in sweeps and frames.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<PointRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loads: Vec<LoadSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cables: Vec<CableSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contacts: Vec<ContactSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub closures: Vec<ClosureSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hooks: Vec<HookSpec>,
    #[serde(default, rename = "static", skip_serializing_if = "Option::is_none")]
    pub statics: Option<StaticBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic: Option<DynamicBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize: Option<OptimizeBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub youngs_modulus: f64,
    pub poisson: f64,
    pub density: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub viscosity: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeSpec {
    Circular,
    Rectangular,
    Ellipsoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub shape: ShapeSpec,
    /// Dimensions at the division start: `[radius]`, `[width, height]` or `[a, b]`.
    pub start: Vec<f64>,
    /// Dimensions at the division end (defaults to `start`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shear_factors: Option<[f64; 2]>,
}

/// Rigid transform given by a translation and a rotation vector (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseSpec {
    #[serde(default, skip_serializing_if = "is_zero3")]
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "is_zero3")]
    pub rotation: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointMode {
    #[default]
    Passive,
    /// Each joint coordinate gets an actuator column.
    Wrench,
    /// Coordinates follow `value · profile(t)`.
    Coordinate,
}

fn is_passive(m: &JointMode) -> bool {
    *m == JointMode::Passive
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateTarget {
    pub value: f64,
    #[serde(default, skip_serializing_if = "ProfileSpec::is_unit")]
    pub profile: ProfileSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis2: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub pitch: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stiffness: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub damping: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_passive")]
    pub mode: JointMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coordinates: Vec<CoordinateTarget>,
}

impl Default for JointSpec {
    fn default() -> Self {
        Self {
            kind: "fixed".into(),
            axis: None,
            axis2: None,
            pitch: 0.0,
            stiffness: Vec::new(),
            damping: Vec::new(),
            mode: JointMode::Passive,
            coordinates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidSpec {
    pub length: f64,
    /// Uniform rod body from a section and a material.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<String>,
    /// Explicit mass properties (used when no section is given).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    /// Principal rotational inertia about the CoM.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub com: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tip: Option<PoseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionSpec {
    pub length: f64,
    pub section: String,
    pub material: String,
    /// Enabled modes and their polynomial orders, keyed by mode name.
    pub modes: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauss_points: Option<usize>,
    /// Reference strain polynomial coefficients (`1, X, X², …`), each a twist.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<[f64; 6]>>,
    /// Per-length screw inertia diagonal replacing the section value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<[f64; 6]>,
    /// Screw stiffness diagonal replacing the section value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<PoseSpec>,
    #[serde(default)]
    pub joint: JointSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rigid: Option<RigidSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub divisions: Vec<DivisionSpec>,
}

/// A point on a link at normalized abscissa `x ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRef {
    pub link: String,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSpec {
    Constant {
        value: f64,
    },
    Ramp {
        start: f64,
        end: f64,
    },
    TriangularPulse {
        start: f64,
        peak: f64,
        end: f64,
    },
    Linear {
        rate: f64,
    },
    Sine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    Table {
        points: Vec<[f64; 2]>,
    },
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec::Constant { value: 1.0 }
    }
}

impl ProfileSpec {
    fn is_unit(&self) -> bool {
        *self == ProfileSpec::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSpec {
    #[default]
    Follower,
    Dead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub link: String,
    pub x: f64,
    /// Wrench, moment first.
    pub wrench: [f64; 6],
    #[serde(default)]
    pub frame: FrameSpec,
    #[serde(default, skip_serializing_if = "ProfileSpec::is_unit")]
    pub profile: ProfileSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbscissaSpec {
    /// Polynomials in the span-normalized abscissa `X ∈ [0, 1]`.
    #[default]
    Normalized,
    /// Polynomials in the arc length (m) from the span start.
    ArcLength,
}

fn is_normalized(a: &AbscissaSpec) -> bool {
    *a == AbscissaSpec::Normalized
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableSpec {
    pub name: String,
    pub link: String,
    /// Half-open division range `[first, end)`; defaults to the whole link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divisions: Option<[usize; 2]>,
    /// Ascending polynomial coefficients of the y offset.
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub max_tension: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub allow_outside: bool,
    #[serde(default, skip_serializing_if = "is_normalized")]
    pub abscissa: AbscissaSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxySpec {
    pub link: String,
    pub x: f64,
    pub radius: f64,
}

/// Contact target: a fixed sphere (`center`) or a sphere on a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactTargetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSpec {
    pub proxies: Vec<ProxySpec>,
    pub target: ContactTargetSpec,
    pub stiffness: f64,
    #[serde(default)]
    pub damping: f64,
}

/// One side of a loop closure; no link means the ground frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
    #[serde(default)]
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureSpec {
    pub a: SideSpec,
    pub b: SideSpec,
    #[serde(default)]
    pub joint: JointSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<PoseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HookSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

/// Tip-position plot of a static sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub point: PointRef,
    /// Load magnitude at factor 1 (x axis of the plot).
    #[serde(default = "one")]
    pub load: f64,
    /// World axes reported as the horizontal and vertical displacement.
    #[serde(default)]
    pub horizontal: usize,
    #[serde(default = "two")]
    pub vertical: usize,
}

fn one() -> f64 {
    1.0
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    /// Time at which prescribed coordinates and load profiles are evaluated.
    #[serde(default)]
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actuation: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticBlock {
    #[serde(default = "static_tol")]
    pub tol: f64,
    #[serde(default = "hundred")]
    pub max_iterations: usize,
    #[serde(default = "fd_step")]
    pub fd_step: f64,
    /// Load-continuation steps per stage.
    #[serde(default = "one_usize")]
    pub steps: usize,
    #[serde(default)]
    pub time: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actuation: Vec<f64>,
    /// Initial guess in physical coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<f64>>,
    /// Sequential stages, each warm-started from the previous one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<PlotSpec>,
}

impl Default for StaticBlock {
    fn default() -> Self {
        Self {
            tol: static_tol(),
            max_iterations: hundred(),
            fd_step: fd_step(),
            steps: 1,
            time: 0.0,
            actuation: Vec::new(),
            q0: None,
            stages: Vec::new(),
            plot: None,
        }
    }
}

fn static_tol() -> f64 {
    1e-8
}

fn hundred() -> usize {
    100
}

fn fd_step() -> f64 {
    1e-6
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorSpec {
    Rk4,
    #[default]
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub actuator: usize,
    pub value: f64,
    #[serde(default, skip_serializing_if = "ProfileSpec::is_unit")]
    pub profile: ProfileSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicBlock {
    pub t_end: f64,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default = "centi")]
    pub dt: f64,
    #[serde(default = "rtol")]
    pub rtol: f64,
    #[serde(default = "atol")]
    pub atol: f64,
    #[serde(default = "centi")]
    pub sample: f64,
    #[serde(default = "yes")]
    pub recenter: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
    /// Initial state in physical coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qd0: Option<Vec<f64>>,
    /// Actuation `u_i(t) = value · profile(t)`; unlisted actuators stay at zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<InputSpec>,
    #[serde(default = "yes")]
    pub frames: bool,
}

fn centi() -> f64 {
    0.01
}

fn rtol() -> f64 {
    1e-6
}

fn atol() -> f64 {
    1e-9
}

/// Desired pose of the controlled frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    /// A fixed pose.
    Pose { pose: PoseSpec },
    /// The static pose reached under the given actuation.
    Static {
        actuation: Vec<f64>,
        #[serde(default = "ten")]
        steps: usize,
    },
    /// The reference frame carried around an axis through `center` at `rpm`.
    Orbit {
        reference: PoseSpec,
        axis: [f64; 3],
        #[serde(default)]
        center: [f64; 3],
        rpm: f64,
    },
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBlock {
    pub point: PointRef,
    pub target: TargetSpec,
    pub kp: f64,
    pub kd: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub unbounded: bool,
    pub t_end: f64,
    #[serde(default = "centi")]
    pub dt: f64,
    #[serde(default = "centi")]
    pub sample: f64,
    /// Errors are summarized over samples after this time.
    #[serde(default)]
    pub settle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeBlock {
    /// Name of the designed cable.
    pub cable: String,
    pub mid: PointRef,
    pub end: PointRef,
    pub mid_target: [f64; 3],
    pub end_target: [f64; 3],
    /// Design `[y₀, y₁, y₂, z₀, z₁, z₂, T]` in the cable's abscissa convention.
    pub x0: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub mesh: f64,
    #[serde(default = "opt_tol")]
    pub tol: f64,
    #[serde(default = "max_evals")]
    pub max_evaluations: usize,
    /// Continuation steps of each static solve.
    #[serde(default = "four")]
    pub steps: usize,
    /// A reference design evaluated alongside the optimum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<Vec<f64>>,
}

fn opt_tol() -> f64 {
    1e-4
}

fn max_evals() -> usize {
    10_000
}

fn four() -> usize {
    4
}

/// A parsed scenario with the keys that were not recognized.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub scenario: Scenario,
    pub unknown_keys: Vec<String>,
    pub warnings: Vec<String>,
}

/// Parse scenario text. In strict mode unknown keys are errors; otherwise
/// they are returned as warnings.
pub fn parse_scenario(text: &str, strict: bool) -> Result<Parsed, CliError> {
    let root: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Parse(e.to_string()))?;
    let root = toml::Value::Table(root);
    let scenario = decode(&root)?;
    let mut unknown = Vec::new();
    find_unknown(&root, &mut Vec::new(), &root, &mut unknown);
    if strict && !unknown.is_empty() {
        return Err(CliError::Parse(format!("unknown keys: {}", unknown.join(", "))));
    }
    let mut warnings: Vec<String> = unknown.iter().map(|k| format!("ignored unknown key '{k}'")).collect();
    warnings.extend(scenario.audit()?);
    Ok(Parsed {
        scenario,
        unknown_keys: unknown,
        warnings,
    })
}

fn decode(v: &toml::Value) -> Result<Scenario, CliError> {
    Scenario::deserialize(v.clone()).map_err(|e| CliError::Parse(e.to_string()))
}

#[derive(Debug, Clone)]
enum Step {
    Key(String),
    Index(usize),
}

fn slot<'a>(v: &'a mut toml::Value, path: &[Step]) -> &'a mut toml::Value {
    path.iter().fold(v, |v, s| match s {
        Step::Key(k) => &mut v.as_table_mut().expect("table")[k.as_str()],
        Step::Index(i) => &mut v.as_array_mut().expect("array")[*i],
    })
}

fn render(path: &[Step]) -> String {
    let mut out = String::new();
    for s in path {
        match s {
            Step::Key(k) if out.is_empty() => out.push_str(k),
            Step::Key(k) => {
                out.push('.');
                out.push_str(k);
            }
            Step::Index(i) => out.push_str(&format!("[{i}]")),
        }
    }
    out
}

/// A key is unknown when the document still deserializes after its value is
/// replaced by a string probe and by a table probe; every schema field
/// rejects at least one of the two.
fn is_ignored(root: &toml::Value, path: &[Step]) -> bool {
    let probes = [
        toml::Value::String("\u{1}probe".into()),
        toml::Value::Table(toml::Table::from_iter([("\u{1}probe".to_string(), toml::Value::Integer(1))])),
    ];
    probes.into_iter().all(|p| {
        let mut doc = root.clone();
        *slot(&mut doc, path) = p;
        decode(&doc).is_ok()
    })
}

fn find_unknown(root: &toml::Value, path: &mut Vec<Step>, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                path.push(Step::Key(k.clone()));
                if is_ignored(root, path) {
                    out.push(render(path));
                } else {
                    find_unknown(root, path, child, out);
                }
                path.pop();
            }
        }
        toml::Value::Array(a) => {
            for (i, child) in a.iter().enumerate() {
                if child.is_table() {
                    path.push(Step::Index(i));
                    find_unknown(root, path, child, out);
                    path.pop();
                }
            }
        }
        _ => {}
    }
}

impl Scenario {
    /// Resolve names and flag suspicious values. Errors on unresolved
    /// references and duplicates; returns warnings otherwise.
    pub fn audit(&self) -> Result<Vec<String>, CliError> {
        let mut warnings = Vec::new();
        for (name, m) in &self.materials {
            if m.youngs_modulus > 0.0 && m.youngs_modulus < 1e3 {
                warnings.push(format!(
                    "material '{name}': Young's modulus {} Pa looks suspiciously small",
                    m.youngs_modulus
                ));
            }
            if m.density > 0.0 && !(10.0..=3e4).contains(&m.density) {
                warnings.push(format!("material '{name}': density {} kg/m³ looks suspicious", m.density));
            }
        }
        let mut names = Vec::new();
        for l in &self.links {
            if names.contains(&l.name.as_str()) {
                return Err(CliError::Parse(format!("duplicate link name '{}'", l.name)));
            }
            if let Some(p) = &l.parent {
                if !names.contains(&p.as_str()) {
                    return Err(CliError::Parse(format!(
                        "link '{}' references unknown parent '{p}' (parents must be declared first)",
                        l.name
                    )));
                }
            }
            names.push(&l.name);
            for d in &l.divisions {
                self.section(&d.section)?;
                self.material(&d.material)?;
            }
            if let Some(r) = &l.rigid {
                if let Some(s) = &r.section {
                    self.section(s)?;
                }
                if let Some(m) = &r.material {
                    self.material(m)?;
                }
            }
            if l.rigid.is_some() == !l.divisions.is_empty() {
                return Err(CliError::Parse(format!(
                    "link '{}' needs either a rigid body or soft divisions",
                    l.name
                )));
            }
        }
        let link = |n: &str| -> Result<(), CliError> {
            if names.contains(&n) {
                Ok(())
            } else {
                Err(CliError::Parse(format!("unknown link '{n}'")))
            }
        };
        for p in &self.points {
            link(&p.link)?;
        }
        for ld in &self.loads {
            link(&ld.link)?;
        }
        let mut cables: Vec<&str> = Vec::new();
        for c in &self.cables {
            link(&c.link)?;
            if cables.contains(&c.name.as_str()) {
                return Err(CliError::Parse(format!("duplicate cable name '{}'", c.name)));
            }
            cables.push(&c.name);
        }
        for c in &self.contacts {
            for p in &c.proxies {
                link(&p.link)?;
            }
            if let Some(l) = &c.target.link {
                link(l)?;
            }
        }
        for c in &self.closures {
            for s in [&c.a, &c.b] {
                if let Some(l) = &s.link {
                    link(l)?;
                }
            }
        }
        if let Some(c) = &self.control {
            link(&c.point.link)?;
        }
        if let Some(o) = &self.optimize {
            link(&o.mid.link)?;
            link(&o.end.link)?;
            if !cables.contains(&o.cable.as_str()) {
                return Err(CliError::Parse(format!("unknown cable '{}'", o.cable)));
            }
        }
        if let Some(p) = self.statics.as_ref().and_then(|s| s.plot.as_ref()) {
            link(&p.point.link)?;
        }
        Ok(warnings)
    }

    pub fn section(&self, name: &str) -> Result<&SectionSpec, CliError> {
        self.sections
            .get(name)
            .ok_or_else(|| CliError::Parse(format!("unknown section '{name}'")))
    }

    pub fn material(&self, name: &str) -> Result<&MaterialSpec, CliError> {
        self.materials
            .get(name)
            .ok_or_else(|| CliError::Parse(format!("unknown material '{name}'")))
    }

    /// Canonical TOML text: defaults made explicit where they carry meaning,
    /// fields in schema order and maps sorted.
    pub fn canonical(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Parse(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
