//! Quadrature assembly of the generalized coefficients `M(q)`, `C(q,q̇)q̇`,
//! `B(q)` and `F(q,q̇)` over the evaluation points of a linkage.

use nalgebra::{DMatrix, DVector, Matrix6xX, Vector3, Vector6};

use crate::error::{GvsError, Result};
use crate::kinematics::KinematicsCache;
use crate::linkage::{Actuator, Cable, ContactPair, ContactTarget, HookContext, Linkage, LoadFrame};
use crate::se3::{ad, angular, linear, twist, Twist};

/// Generalized mass `M = Σ Jᵀ M̄ J`, symmetrized.
pub fn generalized_mass(l: &Linkage, kin: &KinematicsCache) -> DMatrix<f64> {
    let n = l.dof();
    let mut m = DMatrix::zeros(n, n);
    for (p, j) in l.points.iter().zip(&kin.jacobians) {
        if p.inertia[(3, 3)] == 0.0 && p.inertia[(0, 0)] == 0.0 && p.inertia.iter().all(|v| *v == 0.0) {
            continue;
        }
        let mj: Matrix6xX<f64> = p.inertia * j;
        m.gemm_tr(1.0, j, &mj, 1.0);
    }
    (&m + m.transpose()) * 0.5
}

/// Velocity-product vector `c = C(q, q̇) q̇ = Σ Jᵀ (M̄ J̇q̇ − ad(η)ᵀ M̄ η)`.
pub fn generalized_coriolis(l: &Linkage, kin: &KinematicsCache) -> DVector<f64> {
    let n = l.dof();
    let mut c = DVector::zeros(n);
    for (i, p) in l.points.iter().enumerate() {
        if p.inertia.iter().all(|v| *v == 0.0) {
            continue;
        }
        let eta = kin.velocities[i];
        let w: Vector6<f64> = p.inertia * kin.biases[i] - ad(&eta).transpose() * (p.inertia * eta);
        c.gemv_tr(1.0, &kin.jacobians[i], &w, 1.0);
    }
    c
}

/// Cable tangent `t = ξ_lin + ξ_ang × d + d′` at a Gauss point, with the
/// offset `d` and the internal basis there.
fn cable_geometry(
    l: &Linkage,
    c: &Cable,
    span: &(f64, f64),
    point: usize,
    xs: f64,
    q: &DVector<f64>,
) -> (Vector3<f64>, Vector3<f64>, Matrix6xX<f64>, f64) {
    let p = &l.points[point];
    let div = &l.divisions[p.division.expect("cable point on a division")];
    let (phi, xi0) = p.basis.as_ref().expect("soft point basis");
    let len = div.spec.length;
    let xi: Twist = (phi * q.rows(div.q.start, div.q.len()) + xi0) / len;
    let (d, dd) = c.offset(xs);
    let t = linear(&xi) + angular(&xi).cross(&d) + dd / span.1;
    (d, t, phi.clone(), p.weight / len)
}

/// Lengths of all cables by the same quadrature used for `B`.
pub fn cable_lengths(l: &Linkage, q: &DVector<f64>) -> Vec<f64> {
    l.cables()
        .map(|c| {
            let span = l.cable_span(c);
            let mut len = 0.0;
            for i in 0..l.points.len() {
                if let Some(xs) = l.cable_abscissa(c, &span, i) {
                    let (_, t, _, _) = cable_geometry(l, c, &span, i, xs, q);
                    len += l.points[i].weight * t.norm();
                }
            }
            len
        })
        .collect()
}

/// Actuation matrix `B(q)` (n × n_a). A cable column is the negative
/// gradient of the cable length, so unit tension does positive work when
/// the cable shortens.
pub fn actuation_matrix(l: &Linkage, kin: &KinematicsCache) -> Result<DMatrix<f64>> {
    let n = l.dof();
    let mut b = DMatrix::zeros(n, l.actuators.len());
    for (col, a) in l.actuators.iter().enumerate() {
        match a {
            Actuator::Joint { index, .. } => b[(*index, col)] = 1.0,
            Actuator::Cable(c) => {
                let span = l.cable_span(c);
                for i in 0..l.points.len() {
                    let Some(xs) = l.cable_abscissa(c, &span, i) else {
                        continue;
                    };
                    let (d, t, phi, w) = cable_geometry(l, c, &span, i, xs, &kin.q);
                    let tn = t.norm();
                    if tn < 1e-9 {
                        return Err(GvsError::DegenerateCablePath);
                    }
                    let th = t / tn;
                    let dir = twist(&d.cross(&th), &th);
                    let div = &l.divisions[l.points[i].division.unwrap()];
                    let contrib = phi.tr_mul(&dir) * (-w);
                    let mut v = b.view_mut((div.q.start, col), (div.q.len(), 1));
                    v += &contrib;
                }
            }
        }
    }
    Ok(b)
}

/// Per-proxy contact forces (world frame) on a host and the total reaction
/// on the target.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactForces {
    pub proxy_forces: Vec<Vector3<f64>>,
    pub target_force: Vector3<f64>,
    pub penetrations: Vec<f64>,
}

/// Penalty contact between sphere proxies and a target sphere.
pub fn contact_force(pair: &ContactPair, kin: &KinematicsCache) -> Result<ContactForces> {
    let (ps, vs) = match &pair.target {
        ContactTarget::Fixed { center, .. } => (*center, Vector3::zeros()),
        ContactTarget::Body { point, .. } => {
            let g = &kin.poses[*point];
            (g.translation, g.rotation * linear(&kin.velocities[*point]))
        }
    };
    let rs = pair.target.radius();
    let mut out = ContactForces {
        proxy_forces: Vec::with_capacity(pair.proxies.len()),
        target_force: Vector3::zeros(),
        penetrations: Vec::with_capacity(pair.proxies.len()),
    };
    for proxy in &pair.proxies {
        let g = &kin.poses[proxy.point];
        let vi = g.rotation * linear(&kin.velocities[proxy.point]);
        let p = g.translation - ps;
        let dist = p.norm();
        if dist < 1e-9 {
            return Err(GvsError::CoincidentCenters);
        }
        let dir = p / dist;
        let delta = rs + proxy.radius - dist;
        let f = if delta > 0.0 {
            let delta_dot = -dir.dot(&(vi - vs));
            dir * (pair.stiffness * delta + pair.damping * delta_dot)
        } else {
            Vector3::zeros()
        };
        out.target_force -= f;
        out.proxy_forces.push(f);
        out.penetrations.push(delta);
    }
    Ok(out)
}

/// Generalized force of a world-frame force applied at an evaluation point.
fn add_world_force(out: &mut DVector<f64>, kin: &KinematicsCache, point: usize, f: &Vector3<f64>) {
    let body = kin.poses[point].rotation.transpose() * f;
    let w = twist(&Vector3::zeros(), &body);
    out.gemv_tr(1.0, &kin.jacobians[point], &w, 1.0);
}

/// Gravity contribution `Σ Jᵀ M̄ (0; Rᵀ g)`.
pub fn gravity_force(l: &Linkage, kin: &KinematicsCache, factor: f64) -> DVector<f64> {
    let mut out = DVector::zeros(l.dof());
    let g = l.gravity * factor;
    if g == Vector3::zeros() {
        return out;
    }
    for (i, p) in l.points.iter().enumerate() {
        if p.inertia.iter().all(|v| *v == 0.0) {
            continue;
        }
        let gb = kin.poses[i].rotation.transpose() * g;
        let w = p.inertia * twist(&Vector3::zeros(), &gb);
        out.gemv_tr(1.0, &kin.jacobians[i], &w, 1.0);
    }
    out
}

/// Generalized point-load contribution at time `t`, scaled by `factor`.
pub fn point_load_force(l: &Linkage, kin: &KinematicsCache, t: f64, factor: f64) -> DVector<f64> {
    let mut out = DVector::zeros(l.dof());
    for load in &l.loads {
        let s = factor * load.profile.value(t);
        if s == 0.0 {
            continue;
        }
        let w = match load.frame {
            LoadFrame::Follower => load.wrench * s,
            LoadFrame::Dead => {
                let rt = kin.poses[load.point].rotation.transpose();
                twist(&(rt * angular(&load.wrench)), &(rt * linear(&load.wrench))) * s
            }
        };
        out.gemv_tr(1.0, &kin.jacobians[load.point], &w, 1.0);
    }
    out
}

/// Generalized external force: gravity and point loads (scaled by
/// `factor`), contacts and custom hooks.
pub fn generalized_external_force(
    l: &Linkage,
    kin: &KinematicsCache,
    t: f64,
    factor: f64,
) -> Result<DVector<f64>> {
    let mut out = gravity_force(l, kin, factor);
    out += point_load_force(l, kin, t, factor);
    for pair in &l.contacts {
        let cf = contact_force(pair, kin)?;
        for (proxy, f) in pair.proxies.iter().zip(&cf.proxy_forces) {
            if *f != Vector3::zeros() {
                add_world_force(&mut out, kin, proxy.point, f);
            }
        }
        if let ContactTarget::Body { point, .. } = pair.target {
            if cf.target_force != Vector3::zeros() {
                add_world_force(&mut out, kin, point, &cf.target_force);
            }
        }
    }
    for hook in &l.hooks {
        let ctx = HookContext {
            linkage: l,
            kin,
            t,
            q: &kin.q,
            qd: &kin.qd,
        };
        let f = (hook.f)(&ctx)?;
        if f.len() != l.dof() {
            return Err(GvsError::Dimension {
                expected: l.dof(),
                got: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(GvsError::CustomForceNaN);
        }
        out += f;
    }
    Ok(out)
}

/// All generalized coefficients of the equations of motion at one state.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub t: f64,
    pub kin: KinematicsCache,
    pub mass: DMatrix<f64>,
    pub coriolis: DVector<f64>,
    pub actuation: DMatrix<f64>,
    pub force: DVector<f64>,
    /// `K q + D q̇`.
    pub elastic: DVector<f64>,
}

impl Assembly {
    pub fn new(l: &Linkage, t: f64, q: &DVector<f64>, qd: &DVector<f64>, factor: f64) -> Result<Self> {
        let kin = KinematicsCache::new(l, q, qd, false)?;
        Self::from_kinematics(l, kin, t, factor)
    }

    pub fn from_kinematics(l: &Linkage, kin: KinematicsCache, t: f64, factor: f64) -> Result<Self> {
        let mass = generalized_mass(l, &kin);
        let coriolis = generalized_coriolis(l, &kin);
        let actuation = actuation_matrix(l, &kin)?;
        let force = generalized_external_force(l, &kin, t, factor)?;
        let elastic = &l.k * &kin.q + &l.d * &kin.qd;
        Ok(Self {
            t,
            kin,
            mass,
            coriolis,
            actuation,
            force,
            elastic,
        })
    }

    /// Generalized force excluding inertia: `B u + F − c − K q − D q̇`.
    pub fn net_force(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut r = &self.force - &self.coriolis - &self.elastic;
        if !u.is_empty() {
            r.gemv(1.0, &self.actuation, u, 1.0);
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::Joint;
    use crate::linkage::{ContactProxy, LinkageBuilder, RigidBody, SoftDivision};
    use crate::rod::{CrossSection, Material, Mode, StrainBasisSpec};
    use nalgebra::{Matrix6, Vector6};

    fn rod_on_revolute(m: f64, len: f64) -> Linkage {
        let mut b = LinkageBuilder::new();
        let mut body = RigidBody::massless(len);
        body.inertia = Matrix6::from_diagonal(&Vector6::new(0.0, m * len * len / 12.0, m * len * len / 12.0, m, m, m));
        b.add_rigid_link("rod", None, Joint::revolute(Vector3::y()), body).unwrap();
        b.gravity(Vector3::new(0.0, 0.0, -9.81));
        b.finalize().unwrap()
    }

    #[test]
    fn rigid_rod_mass_and_gravity() {
        let l = rod_on_revolute(2.0, 1.5);
        let kin = KinematicsCache::at_rest(&l, &DVector::zeros(1)).unwrap();
        let m = generalized_mass(&l, &kin);
        assert!((m[(0, 0)] - 2.0 * 1.5 * 1.5 / 3.0).abs() < 1e-12);
        // rotation about +y takes +x towards −z, so gravity pushes q positive
        let f = generalized_external_force(&l, &kin, 0.0, 1.0).unwrap();
        assert!((f[0] - 2.0 * 9.81 * 0.75).abs() < 1e-12);
    }

    #[test]
    fn soft_stretch_mass() {
        let mut b = LinkageBuilder::new();
        let (rho, r, len) = (1000.0, 0.01, 0.8);
        b.add_soft_link(
            "rod",
            None,
            Joint::fixed(),
            vec![SoftDivision::new(
                len,
                CrossSection::circular(r),
                Material::new(1e6, 0.5, rho),
                StrainBasisSpec::new().with_mode(Mode::Stretch, 0),
            )],
        )
        .unwrap();
        let l = b.finalize().unwrap();
        let kin = KinematicsCache::at_rest(&l, &DVector::zeros(1)).unwrap();
        let m = generalized_mass(&l, &kin);
        let a = std::f64::consts::PI * r * r;
        let expect = rho * a * len.powi(3) / 3.0;
        assert!(((m[(0, 0)] - expect) / expect).abs() < 1e-12);
    }

    #[test]
    fn cable_column_for_offset_cable() {
        let (len, d1) = (0.6, 0.005);
        let mut b = LinkageBuilder::new();
        let rod = b
            .add_soft_link(
                "rod",
                None,
                Joint::fixed(),
                vec![SoftDivision::new(
                    len,
                    CrossSection::circular(0.01),
                    Material::new(1e6, 0.5, 1000.0),
                    StrainBasisSpec::new().with_mode(Mode::BendZ, 0).with_mode(Mode::BendY, 0),
                )],
            )
            .unwrap();
        b.add_cable(Cable {
            name: "c".into(),
            link: rod,
            divisions: 0..1,
            y: vec![d1],
            z: vec![],
            max_tension: 10.0,
            allow_outside: false,
        })
        .unwrap();
        b.normalize(false);
        let l = b.finalize().unwrap();
        let kin = KinematicsCache::at_rest(&l, &DVector::zeros(2)).unwrap();
        let bm = actuation_matrix(&l, &kin).unwrap();
        // pulling a cable on the +y side bends the rod towards +y (positive κ_z)
        assert!((bm[(1, 0)] - d1 * len).abs() < 1e-15);
        assert!(bm[(0, 0)].abs() < 1e-15);

        let mut b2 = LinkageBuilder::new();
        let rod = b2
            .add_soft_link(
                "rod",
                None,
                Joint::fixed(),
                vec![SoftDivision::new(
                    len,
                    CrossSection::circular(0.01),
                    Material::new(1e6, 0.5, 1000.0),
                    StrainBasisSpec::kirchhoff(1),
                )],
            )
            .unwrap();
        b2.add_cable(Cable {
            name: "centroidal".into(),
            link: rod,
            divisions: 0..1,
            y: vec![],
            z: vec![],
            max_tension: 10.0,
            allow_outside: false,
        })
        .unwrap();
        let l2 = b2.finalize().unwrap();
        let kin = KinematicsCache::at_rest(&l2, &DVector::zeros(6)).unwrap();
        assert!(actuation_matrix(&l2, &kin).unwrap().abs().max() < 1e-15);
    }

    #[test]
    fn contact_arithmetic() {
        let mut b = LinkageBuilder::new();
        let arm = b
            .add_rigid_link("arm", None, Joint::prismatic(Vector3::x()), RigidBody::massless(1.0))
            .unwrap();
        b.add_contact(ContactPair {
            proxies: vec![ContactProxy {
                link: arm,
                x: 1.0,
                radius: 0.05,
                point: 0,
            }],
            target: ContactTarget::Fixed {
                center: Vector3::new(1.099, 0.0, 0.0),
                radius: 0.05,
            },
            stiffness: 1e4,
            damping: 0.0,
        })
        .unwrap();
        let l = b.finalize().unwrap();
        let kin = KinematicsCache::at_rest(&l, &DVector::zeros(1)).unwrap();
        let cf = contact_force(&l.contacts[0], &kin).unwrap();
        assert!((cf.proxy_forces[0] - Vector3::new(-10.0, 0.0, 0.0)).norm() < 1e-9);
        assert!((cf.proxy_forces[0] + cf.target_force).norm() < 1e-15);
        let far = KinematicsCache::at_rest(&l, &DVector::from_element(1, -0.01)).unwrap();
        let cf = contact_force(&l.contacts[0], &far).unwrap();
        assert_eq!(cf.proxy_forces[0], Vector3::zeros());
    }

    #[test]
    fn coincident_contact_centers() {
        let mut b = LinkageBuilder::new();
        let arm = b.add_rigid_link("arm", None, Joint::fixed(), RigidBody::massless(1.0)).unwrap();
        b.add_contact(ContactPair {
            proxies: vec![ContactProxy {
                link: arm,
                x: 1.0,
                radius: 0.05,
                point: 0,
            }],
            target: ContactTarget::Fixed {
                center: Vector3::new(1.0, 0.0, 0.0),
                radius: 0.05,
            },
            stiffness: 1e4,
            damping: 0.0,
        })
        .unwrap();
        let l = b.finalize().unwrap();
        let kin = KinematicsCache::at_rest(&l, &DVector::zeros(0)).unwrap();
        assert!(matches!(contact_force(&l.contacts[0], &kin), Err(GvsError::CoincidentCenters)));
    }

    #[test]
    fn dead_and_follower_agree_at_reference() {
        let build = |frame| {
            let mut b = LinkageBuilder::new();
            let r = b
                .add_soft_link(
                    "rod",
                    None,
                    Joint::fixed(),
                    vec![SoftDivision::new(
                        1.0,
                        CrossSection::circular(0.01),
                        Material::new(1e6, 0.5, 1000.0),
                        StrainBasisSpec::all_modes(1, 1),
                    )],
                )
                .unwrap();
            b.add_point_load(r, 1.0, Twist::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0), frame, Default::default())
                .unwrap();
            b.finalize().unwrap()
        };
        let a = build(LoadFrame::Dead);
        let f = build(LoadFrame::Follower);
        let q = DVector::zeros(a.dof());
        let fa = generalized_external_force(&a, &KinematicsCache::at_rest(&a, &q).unwrap(), 0.0, 1.0).unwrap();
        let ff = generalized_external_force(&f, &KinematicsCache::at_rest(&f, &q).unwrap(), 0.0, 1.0).unwrap();
        assert_eq!(fa, ff);
        assert!(fa.norm() > 0.0);
    }
}
