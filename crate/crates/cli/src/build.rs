//! Compile a [`Scenario`] into a [`Linkage`].

use std::collections::BTreeMap;

use gvs_core::linkage::Link;
use gvs_core::rod::{SectionShape, TensorOverride};
use gvs_core::{
    Cable, ClosureSide, ContactPair, ContactProxy, ContactTarget, CrossSection, Joint, JointControl,
    JointKind, LinkId, Linkage, LinkageBuilder, LoadFrame, Material, Mode, Pose, Profile,
    ReferenceStrain, RigidBody, SoftDivision, StrainBasisSpec, Twist,
};
use nalgebra::{Matrix6, Vector3, Vector6};

use crate::error::{CliError, SolverResult};
use crate::hooks::build_hook;
use crate::scenario::*;

/// A compiled scenario with name lookups.
#[derive(Debug, Clone)]
pub struct Model {
    pub linkage: Linkage,
    pub links: BTreeMap<String, LinkId>,
    /// Declared output points as `(link name, x, evaluation point index)`.
    pub outputs: Vec<(String, f64, usize)>,
}

impl Model {
    pub fn link(&self, name: &str) -> Result<LinkId, CliError> {
        self.links
            .get(name)
            .copied()
            .ok_or_else(|| CliError::Parse(format!("unknown link '{name}'")))
    }

    /// Evaluation point index of a point reference.
    pub fn point(&self, p: &PointRef) -> Result<usize, CliError> {
        self.linkage.point_at(self.link(&p.link)?, p.x).model()
    }
}

pub fn pose(p: &PoseSpec) -> Pose {
    Pose::from_rotation_vector(Vector3::from(p.rotation), Vector3::from(p.translation))
}

pub fn profile(p: &ProfileSpec) -> Profile {
    match p {
        ProfileSpec::Constant { value } => Profile::Constant(*value),
        ProfileSpec::Ramp { start, end } => Profile::Ramp { start: *start, end: *end },
        ProfileSpec::TriangularPulse { start, peak, end } => Profile::TriangularPulse {
            start: *start,
            peak: *peak,
            end: *end,
        },
        ProfileSpec::Linear { rate } => Profile::Linear { rate: *rate },
        ProfileSpec::Sine {
            amplitude,
            frequency,
            phase,
            offset,
        } => Profile::Sine {
            amplitude: *amplitude,
            frequency: *frequency,
            phase: *phase,
            offset: *offset,
        },
        ProfileSpec::Table { points } => Profile::Table(points.iter().map(|p| (p[0], p[1])).collect()),
    }
}

fn material(m: &MaterialSpec) -> Material {
    Material::new(m.youngs_modulus, m.poisson, m.density).with_viscosity(m.viscosity)
}

fn section(s: &SectionSpec, name: &str) -> Result<CrossSection, CliError> {
    let (shape, n) = match s.shape {
        ShapeSpec::Circular => (SectionShape::Circular, 1),
        ShapeSpec::Rectangular => (SectionShape::Rectangular, 2),
        ShapeSpec::Ellipsoidal => (SectionShape::Ellipsoidal, 2),
    };
    let dims = |v: &[f64]| -> Result<[f64; 2], CliError> {
        if v.len() != n {
            return Err(CliError::Parse(format!(
                "section '{name}' needs {n} dimension(s), got {}",
                v.len()
            )));
        }
        Ok([v[0], if n == 2 { v[1] } else { 0.0 }])
    };
    let start = dims(&s.start)?;
    let end = match &s.end {
        Some(e) => dims(e)?,
        None => start,
    };
    Ok(CrossSection {
        shape,
        start,
        end,
        shear_factors: s.shear_factors.unwrap_or([1.0, 1.0]),
        table: None,
    })
}

pub fn joint(j: &JointSpec) -> Result<Joint, CliError> {
    let kind = JointKind::from_name(&j.kind).ok_or_else(|| {
        CliError::Parse(format!(
            "unknown joint kind '{}' (expected one of {})",
            j.kind,
            JointKind::ALL.map(|k| k.name()).join(", ")
        ))
    })?;
    let mut out = Joint::new(kind);
    if let Some(a) = j.axis {
        out.axis = Vector3::from(a);
    }
    if let Some(a) = j.axis2 {
        out.axis2 = Vector3::from(a);
    }
    out.pitch = j.pitch;
    out.stiffness = j.stiffness.clone();
    out.damping = j.damping.clone();
    out.control = match j.mode {
        JointMode::Passive if j.coordinates.is_empty() => JointControl::Passive,
        JointMode::Wrench if j.coordinates.is_empty() => JointControl::Wrench,
        JointMode::Coordinate => {
            JointControl::Coordinate(j.coordinates.iter().map(|c| (c.value, profile(&c.profile))).collect())
        }
        _ => {
            return Err(CliError::Parse(
                "joint coordinates are only allowed with mode = \"coordinate\"".into(),
            ))
        }
    };
    out.validate().model()?;
    Ok(out)
}

fn diag_override(d: [f64; 6]) -> TensorOverride {
    let m = Matrix6::from_diagonal(&Vector6::from(d));
    TensorOverride::new(move |_, _| m)
}

fn division(sc: &Scenario, d: &DivisionSpec) -> Result<SoftDivision, CliError> {
    let mut basis = StrainBasisSpec::new();
    for (name, order) in &d.modes {
        let mode = Mode::from_name(name).ok_or_else(|| {
            CliError::Parse(format!(
                "unknown mode '{name}' (expected one of {})",
                Mode::ALL.map(|m| m.name()).join(", ")
            ))
        })?;
        basis = basis.with_mode(mode, *order);
    }
    if let Some(r) = &d.reference {
        basis = basis.with_reference(ReferenceStrain {
            coefficients: r.iter().map(|c| Twist::from(*c)).collect(),
        });
    }
    let mut div = SoftDivision::new(
        d.length,
        section(sc.section(&d.section)?, &d.section)?,
        material(sc.material(&d.material)?),
        basis,
    );
    if let Some(n) = d.gauss_points {
        div = div.with_gauss_points(n);
    }
    div.inertia_override = d.inertia.map(diag_override);
    div.stiffness_override = d.stiffness.map(diag_override);
    div.damping_override = d.damping.map(diag_override);
    Ok(div)
}

fn rigid(sc: &Scenario, r: &RigidSpec) -> Result<RigidBody, CliError> {
    let mut body = match (&r.section, &r.material) {
        (Some(s), Some(m)) => {
            if r.mass.is_some() || r.inertia.is_some() {
                return Err(CliError::Parse(
                    "a rigid body takes either a section and material or explicit mass properties".into(),
                ));
            }
            RigidBody::rod(r.length, &section(sc.section(s)?, s)?, &material(sc.material(m)?)).model()?
        }
        (None, None) => {
            let mut b = RigidBody::massless(r.length);
            let m = r.mass.unwrap_or(0.0);
            let j = r.inertia.unwrap_or([0.0; 3]);
            b.inertia = Matrix6::from_diagonal(&Vector6::new(j[0], j[1], j[2], m, m, m));
            b
        }
        _ => {
            return Err(CliError::Parse(
                "a rigid body needs both a section and a material".into(),
            ))
        }
    };
    if let Some(c) = r.com {
        body.com = Pose::from_translation(Vector3::from(c));
    }
    if let Some(t) = &r.tip {
        body.tip = pose(t);
    }
    Ok(body)
}

/// Build the linkage described by a scenario.
pub fn build_model(sc: &Scenario) -> Result<Model, CliError> {
    sc.audit()?;
    let mut b = LinkageBuilder::new();
    b.gravity(Vector3::from(sc.gravity));
    b.normalize(sc.normalize);
    if let Some([a, bb]) = sc.baumgarte {
        b.baumgarte(a, bb);
    }
    let mut links = BTreeMap::new();
    for l in &sc.links {
        let parent = l.parent.as_ref().map(|p| links[p.as_str()]);
        let body = match &l.rigid {
            Some(r) => gvs_core::linkage::LinkBody::Rigid(rigid(sc, r)?),
            None => gvs_core::linkage::LinkBody::Soft(
                l.divisions.iter().map(|d| division(sc, d)).collect::<Result<_, _>>()?,
            ),
        };
        let id = b
            .add_link(Link {
                name: l.name.clone(),
                parent,
                offset: l.offset.as_ref().map(pose).unwrap_or_else(Pose::identity),
                joint: joint(&l.joint)?,
                body,
            })
            .model()?;
        links.insert(l.name.clone(), id);
    }
    let id = |n: &str| links[n];
    let mut outputs = Vec::new();
    let mut extra: Vec<&PointRef> = sc.points.iter().collect();
    if let Some(c) = &sc.control {
        extra.push(&c.point);
    }
    if let Some(o) = &sc.optimize {
        extra.push(&o.mid);
        extra.push(&o.end);
    }
    if let Some(p) = sc.statics.as_ref().and_then(|s| s.plot.as_ref()) {
        extra.push(&p.point);
    }
    for p in &extra {
        b.add_output_point(id(&p.link), p.x).model()?;
    }
    for ld in &sc.loads {
        let frame = match ld.frame {
            FrameSpec::Follower => LoadFrame::Follower,
            FrameSpec::Dead => LoadFrame::Dead,
        };
        b.add_point_load(id(&ld.link), ld.x, Twist::from(ld.wrench), frame, profile(&ld.profile))
            .model()?;
    }
    for c in &sc.cables {
        let link = &sc.links[id(&c.link)];
        let range = match c.divisions {
            Some([a, e]) => a..e,
            None => 0..link.divisions.len(),
        };
        let (y, z) = match c.abscissa {
            AbscissaSpec::Normalized => (c.y.clone(), c.z.clone()),
            AbscissaSpec::ArcLength => {
                let span: f64 = link
                    .divisions
                    .get(range.clone())
                    .ok_or_else(|| CliError::Parse(format!("cable '{}' division span is invalid", c.name)))?
                    .iter()
                    .map(|d| d.length)
                    .sum();
                (arc_to_normalized(&c.y, span), arc_to_normalized(&c.z, span))
            }
        };
        b.add_cable(Cable {
            name: c.name.clone(),
            link: id(&c.link),
            divisions: range,
            y,
            z,
            max_tension: c.max_tension,
            allow_outside: c.allow_outside,
        })
        .model()?;
    }
    for c in &sc.contacts {
        let proxies = c
            .proxies
            .iter()
            .map(|p| ContactProxy::new(id(&p.link), p.x, p.radius))
            .collect();
        let target = match (&c.target.center, &c.target.link) {
            (Some(center), None) => ContactTarget::Fixed {
                center: Vector3::from(*center),
                radius: c.target.radius,
            },
            (None, Some(l)) => ContactTarget::body(id(l), c.target.x.unwrap_or(0.5), c.target.radius),
            _ => {
                return Err(CliError::Parse(
                    "a contact target needs exactly one of 'center' or 'link'".into(),
                ))
            }
        };
        b.add_contact(ContactPair {
            proxies,
            target,
            stiffness: c.stiffness,
            damping: c.damping,
        })
        .model()?;
    }
    for c in &sc.closures {
        let side = |s: &SideSpec| ClosureSide {
            link: s.link.as_deref().map(id),
            x: s.x,
        };
        b.add_loop_closure(side(&c.a), side(&c.b), joint(&c.joint)?, c.offset.as_ref().map(pose))
            .model()?;
    }
    for h in &sc.hooks {
        b.add_force_hook(build_hook(&h.name, &h.params)?);
    }
    let linkage = b.finalize().model()?;
    for p in &sc.points {
        let idx = linkage.point_at(id(&p.link), p.x).model()?;
        outputs.push((p.link.clone(), p.x, idx));
    }
    Ok(Model {
        linkage,
        links,
        outputs,
    })
}

/// Convert arc-length polynomial coefficients to the span-normalized abscissa.
pub fn arc_to_normalized(c: &[f64], span: f64) -> Vec<f64> {
    c.iter().enumerate().map(|(k, a)| a * span.powi(k as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arc_length_coefficients_scale_by_powers_of_the_span() {
        assert_eq!(arc_to_normalized(&[1.0, 2.0, 3.0], 0.5), vec![1.0, 1.0, 0.75]);
    }
}
