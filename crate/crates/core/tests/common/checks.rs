//! Finite-difference and closed-form error measures for kinematics and dynamics.

use gvs_core::assembly::{generalized_coriolis, generalized_mass, gravity_force};
use gvs_core::dynamics::dynamics_rhs;
use gvs_core::energy::{dissipation, energy};
use gvs_core::linkage::{Link, LinkBody};
use gvs_core::se3::log_se3;
use gvs_core::{
    forward_kinematics, jacobian, jacobian_dot, simulate, static_equilibrium, CrossSection, DynamicOptions,
    Input, Integrator, Joint, KinematicsCache, Linkage, LinkageBuilder, Material, Pose, RigidBody,
    SoftDivision, StaticOptions, StrainBasisSpec, Trajectory,
};
use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};
use rand::Rng;

use super::{random_model, random_state, rng};

pub const MODELS: u64 = 20;

fn rel(err: f64, scale: f64) -> f64 {
    err / scale.max(1e-12)
}

/// Largest relative error of the point Jacobians against central differences
/// of `log(g(q)⁻¹ g(q ± h eᵢ))`.
pub fn jacobian_error(l: &Linkage, q: &DVector<f64>) -> f64 {
    let h = 1e-6;
    let g0 = forward_kinematics(l, q).unwrap();
    let jac = jacobian(l, q).unwrap();
    let n = l.dof();
    let mut perturbed = Vec::with_capacity(n);
    for i in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += h;
        qm[i] -= h;
        perturbed.push((forward_kinematics(l, &qp).unwrap(), forward_kinematics(l, &qm).unwrap()));
    }
    let mut worst: f64 = 0.0;
    for (k, jk) in jac.iter().enumerate() {
        let inv = g0[k].inverse();
        let mut fd = DMatrix::zeros(6, n);
        for (i, (gp, gm)) in perturbed.iter().enumerate() {
            let d = (log_se3(&(inv * gp[k])).unwrap() - log_se3(&(inv * gm[k])).unwrap()) / (2.0 * h);
            fd.set_column(i, &d);
        }
        let j = DMatrix::from_column_slice(6, n, jk.as_slice());
        worst = worst.max(rel((&j - &fd).norm(), j.norm()));
    }
    worst
}

/// Largest relative error of `J̇` against `(J(q + hq̇) − J(q − hq̇)) / 2h`.
pub fn jacobian_rate_error(l: &Linkage, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
    let h = 1e-6;
    let jdot = jacobian_dot(l, q, qd).unwrap();
    let j0 = jacobian(l, q).unwrap();
    let jp = jacobian(l, &(q + qd * h)).unwrap();
    let jm = jacobian(l, &(q - qd * h)).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..jdot.len() {
        let fd = (&jp[k] - &jm[k]) / (2.0 * h);
        let scale = fd.norm().max(j0[k].norm() * qd.norm());
        worst = worst.max(rel((&jdot[k] - &fd).norm(), scale));
    }
    worst
}

/// Relative asymmetry and smallest eigenvalue of the mass matrix.
pub fn mass_defects(l: &Linkage, q: &DVector<f64>) -> (f64, f64) {
    let kin = KinematicsCache::at_rest(l, q).unwrap();
    let m = generalized_mass(l, &kin);
    let asym = (&m - m.transpose()).norm() / m.norm();
    let eig = m.symmetric_eigen().eigenvalues.min();
    (asym, eig)
}

/// Step for a central difference along `v`, so that the state moves by about `1e-5`.
fn step_along(v: &DVector<f64>) -> f64 {
    1e-5 / v.norm().max(1.0)
}

/// `Ṁ` along `q̇` by a central directional difference.
fn mass_rate(l: &Linkage, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
    let h = step_along(qd);
    let m = |q: &DVector<f64>| {
        let kin = KinematicsCache::at_rest(l, q).unwrap();
        generalized_mass(l, &kin)
    };
    (m(&(q + qd * h)) - m(&(q - qd * h))) / (2.0 * h)
}

/// A short free-motion trajectory of random model `seed`.
pub fn trajectory(seed: u64) -> (Linkage, Trajectory) {
    let l = random_model(seed, true);
    let (q0, qd0) = random_state(&l, seed);
    let opts = DynamicOptions {
        t_end: 0.02,
        integrator: Integrator::Adaptive { rtol: 1e-8, atol: 1e-10 },
        sample: 0.005,
        ..Default::default()
    };
    let traj = simulate(&l, &q0, &(qd0 * 0.3), Input::None, &opts).unwrap();
    (l, traj)
}

/// Relative residual of `q̇ᵀ(½Ṁq̇ − c)`.
pub fn power_identity_residual(l: &Linkage, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
    let kin = KinematicsCache::new(l, q, qd, false).unwrap();
    let c = generalized_coriolis(l, &kin);
    let half = 0.5 * qd.dot(&(mass_rate(l, q, qd) * qd));
    let cq = qd.dot(&c);
    rel((half - cq).abs(), half.abs() + cq.abs())
}

/// Relative residual of `dE/dt + q̇ᵀDq̇` with accelerations from the forward dynamics.
/// The potential rate is a central difference of the energy report along `q̇`.
pub fn energy_balance_residual(l: &Linkage, t: f64, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
    let u = DVector::zeros(l.actuator_count());
    let qdd = dynamics_rhs(l, t, q, qd, &u).unwrap();
    let h = step_along(qd);
    let rest = DVector::zeros(l.dof());
    let v = |s: f64| energy(l, &(q + qd * s), &rest).unwrap().total;
    let kin = KinematicsCache::new(l, q, qd, false).unwrap();
    let m = generalized_mass(l, &kin);
    let inertial = qd.dot(&(&m * &qdd));
    let rate = inertial + 0.5 * qd.dot(&(mass_rate(l, q, qd) * qd)) + (v(h) - v(-h)) / (2.0 * h);
    let diss = dissipation(l, qd);
    let scale = qd.dot(&(l.stiffness() * q)).abs()
        + qd.dot(&gravity_force(l, &kin, 1.0)).abs()
        + inertial.abs()
        + diss.abs();
    rel((rate + diss).abs(), scale)
}

fn planar_2r(l1: f64, l2: f64, m1: f64, m2: f64, i1: f64, i2: f64) -> Linkage {
    let body = |len: f64, m: f64, izz: f64| {
        let mut b = RigidBody::massless(len);
        b.inertia = Matrix6::from_diagonal(&Vector6::new(0.3 * izz, 0.7 * izz, izz, m, m, m));
        b
    };
    let mut b = LinkageBuilder::new();
    b.gravity(Vector3::new(0.0, -9.81, 0.0));
    let z = Vector3::z();
    let a = b.add_rigid_link("upper", None, Joint::revolute(z), body(l1, m1, i1)).unwrap();
    b.add_rigid_link("lower", Some(a), Joint::revolute(z), body(l2, m2, i2)).unwrap();
    b.finalize().unwrap()
}

/// Largest absolute errors of `M`, `c` and the gravity vector of a planar
/// two-link arm against the textbook closed form, over random states.
pub fn planar_2r_errors() -> [f64; 3] {
    let (l1, l2, m1, m2, i1, i2, g) = (0.7, 0.45, 1.3, 0.8, 0.05, 0.02, 9.81);
    let (a1, a2) = (0.5 * l1, 0.5 * l2);
    let l = planar_2r(l1, l2, m1, m2, i1, i2);
    let mut r = rng(7);
    let mut worst = [0.0f64; 3];
    for _ in 0..25 {
        let q: DVector<f64> = DVector::from_fn(2, |_, _| r.random_range(-3.0..3.0));
        let qd: DVector<f64> = DVector::from_fn(2, |_, _| r.random_range(-4.0..4.0));
        let (c2, s2) = (q[1].cos(), q[1].sin());
        let m11 = i1 + i2 + m1 * a1 * a1 + m2 * (l1 * l1 + a2 * a2 + 2.0 * l1 * a2 * c2);
        let m12 = i2 + m2 * (a2 * a2 + l1 * a2 * c2);
        let m22 = i2 + m2 * a2 * a2;
        let h = -m2 * l1 * a2 * s2;
        let m_ref = DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22]);
        let c_ref = DVector::from_vec(vec![h * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]), -h * qd[0] * qd[0]]);
        let g_ref = DVector::from_vec(vec![
            -(m1 * a1 + m2 * l1) * g * q[0].cos() - m2 * a2 * g * (q[0] + q[1]).cos(),
            -m2 * a2 * g * (q[0] + q[1]).cos(),
        ]);
        let kin = KinematicsCache::new(&l, &q, &qd, false).unwrap();
        worst[0] = worst[0].max((generalized_mass(&l, &kin) - m_ref).amax());
        worst[1] = worst[1].max((generalized_coriolis(&l, &kin) - c_ref).amax());
        worst[2] = worst[2].max((gravity_force(&l, &kin, 1.0) - g_ref).amax());
    }
    worst
}

/// Largest mismatch in poses, energy and physical accelerations between the
/// normalized and unnormalized versions of random model `seed`.
pub fn normalization_mismatch(seed: u64) -> f64 {
    let ln = random_model(seed, true);
    let lp = random_model(seed, false);
    let (qn, qdn) = random_state(&ln, seed);
    let (qp, qdp) = (ln.to_physical(&qn), ln.to_physical(&qdn));
    let gn = forward_kinematics(&ln, &qn).unwrap();
    let gp = forward_kinematics(&lp, &qp).unwrap();
    let mut worst = gn
        .iter()
        .zip(&gp)
        .map(|(a, b)| (a.to_matrix() - b.to_matrix()).norm())
        .fold(0.0, f64::max);
    let en = energy(&ln, &qn, &qdn).unwrap().total;
    let ep = energy(&lp, &qp, &qdp).unwrap().total;
    worst = worst.max(rel((en - ep).abs(), en.abs()));
    let u = DVector::zeros(ln.actuator_count());
    let an = ln.to_physical(&dynamics_rhs(&ln, 0.0, &qn, &qdn, &u).unwrap());
    let ap = dynamics_rhs(&lp, 0.0, &qp, &qdp, &u).unwrap();
    worst.max(rel((&an - &ap).norm(), ap.norm()))
}

fn drooping_cantilever(normalize: bool) -> Linkage {
    let mut b = LinkageBuilder::new();
    b.gravity(Vector3::new(0.0, 0.0, -9.81));
    b.normalize(normalize);
    let mat = Material::new(2e5, 0.45, 1100.0);
    let divs = (0..2)
        .map(|i| {
            let r0 = 0.02 - 0.004 * i as f64;
            SoftDivision::new(
                0.25,
                CrossSection::tapered_circular(r0, r0 - 0.004),
                mat,
                StrainBasisSpec::all_modes(3, 1),
            )
        })
        .collect();
    b.add_link(Link {
        name: "rod".into(),
        parent: None,
        offset: Pose::identity(),
        joint: Joint::fixed(),
        body: LinkBody::Soft(divs),
    })
    .unwrap();
    b.finalize().unwrap()
}

/// Tip position under gravity and the relative mismatch of the equilibria
/// found with and without coordinate normalization.
pub fn normalized_statics() -> (Vector3<f64>, f64) {
    let opts = StaticOptions {
        steps: 4,
        tol: 1e-12,
        ..Default::default()
    };
    let mut tips = Vec::new();
    let mut qs = Vec::new();
    for normalize in [true, false] {
        let l = drooping_cantilever(normalize);
        let u = DVector::zeros(l.actuator_count());
        let sol = static_equilibrium(&l, &u, &DVector::zeros(l.dof()), &opts).unwrap();
        let g = forward_kinematics(&l, &sol.q).unwrap();
        tips.push(g[l.tip_point(0)].translation);
        qs.push(l.to_physical(&sol.q));
    }
    let mismatch = ((tips[0] - tips[1]).norm() / tips[0].norm()).max((&qs[0] - &qs[1]).norm() / qs[0].norm());
    (tips[0], mismatch)
}
