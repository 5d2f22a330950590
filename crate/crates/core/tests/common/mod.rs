//! Seeded random hybrid rigid-soft models for property tests.

#![allow(dead_code)]

pub mod checks;
pub mod lie;

use gvs_core::linkage::{Link, LinkBody};
use gvs_core::{
    CrossSection, Joint, JointKind, Linkage, LinkageBuilder, Material, Mode, Pose, RigidBody,
    SoftDivision, StrainBasisSpec,
};
use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit(r: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.2 && n < 1.0 {
            return v / n;
        }
    }
}

fn pose(r: &mut ChaCha8Rng, rot: f64, trans: f64) -> Pose {
    Pose::from_rotation_vector(unit(r) * r.random_range(0.0..rot), unit(r) * r.random_range(0.0..trans))
}

fn joint(r: &mut ChaCha8Rng, root: bool) -> Joint {
    let kinds = [
        JointKind::Fixed,
        JointKind::Revolute,
        JointKind::Prismatic,
        JointKind::Helical,
        JointKind::Cylindrical,
        JointKind::Universal,
        JointKind::Planar,
        JointKind::Spherical,
        JointKind::Free,
    ];
    let kind = if root && r.random_bool(0.2) {
        JointKind::Free
    } else {
        kinds[r.random_range(0..kinds.len() - 1)]
    };
    let mut j = Joint::new(kind);
    let a = unit(r);
    j.axis = a;
    let mut b = unit(r);
    b -= a * a.dot(&b);
    j.axis2 = b.normalize();
    if kind == JointKind::Helical {
        j.pitch = r.random_range(-0.2..0.2);
    }
    let n = j.dof();
    if n > 0 && r.random_bool(0.5) {
        j.stiffness = (0..n).map(|_| r.random_range(0.0..5.0)).collect();
        j.damping = (0..n).map(|_| r.random_range(0.0..0.5)).collect();
    }
    j
}

fn division(r: &mut ChaCha8Rng) -> SoftDivision {
    let mut basis = StrainBasisSpec::new();
    for m in Mode::ALL {
        if r.random_bool(0.6) {
            let order = if m.is_angular() { r.random_range(0..3) } else { r.random_range(0..2) };
            basis = basis.with_mode(m, order);
        }
    }
    let r0 = r.random_range(0.01..0.03);
    let r1 = r0 * r.random_range(0.6..1.0);
    let mat = Material::new(r.random_range(1e5..1e6), 0.5, 1000.0).with_viscosity(r.random_range(0.0..500.0));
    SoftDivision::new(r.random_range(0.1..0.4), CrossSection::tapered_circular(r0, r1), mat, basis)
        .with_gauss_points(r.random_range(4..8))
}

/// A random open-chain or tree linkage with mixed joints and 1 to 3 soft divisions per soft link.
pub fn random_model(seed: u64, normalize: bool) -> Linkage {
    let mut r = rng(seed);
    let mut b = LinkageBuilder::new();
    b.gravity(unit(&mut r) * 9.81);
    b.normalize(normalize);
    let links = r.random_range(2..5);
    let mut soft = 0;
    for i in 0..links {
        let parent = if i == 0 { None } else { Some(r.random_range(0..i)) };
        let make_soft = (i == links - 1 && soft == 0) || r.random_bool(0.5);
        let body = if make_soft {
            soft += 1;
            LinkBody::Soft((0..r.random_range(1..4)).map(|_| division(&mut r)).collect())
        } else {
            let section = CrossSection::circular(r.random_range(0.01..0.03));
            let mat = Material::new(1e9, 0.3, r.random_range(500.0..3000.0));
            LinkBody::Rigid(RigidBody::rod(r.random_range(0.05..0.3), &section, &mat).unwrap())
        };
        b.add_link(Link {
            name: format!("link{i}"),
            parent,
            offset: pose(&mut r, 1.0, 0.05),
            joint: joint(&mut r, i == 0),
            body,
        })
        .unwrap();
    }
    b.finalize().unwrap()
}

/// A random state with joint angles up to about 1 rad and curvatures of a few rad/m.
pub fn random_state(l: &Linkage, seed: u64) -> (DVector<f64>, DVector<f64>) {
    let mut r = rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = l.dof();
    let q_phys = DVector::from_fn(n, |_, _| r.random_range(-0.8..0.8));
    let qd_phys = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
    (l.to_internal(&q_phys), l.to_internal(&qd_phys))
}
