//! Recursive forward kinematics, geometric Jacobian and its time derivative at
//! every evaluation point of a [`Linkage`].

use nalgebra::{DVector, Matrix6, Matrix6xX};

use crate::error::{GvsError, Result};
use crate::linkage::{Linkage, Op};
use crate::se3::{ad, exp_se3, tangent_exp, tangent_exp_rate, Pose, Twist, MAGNUS_BRACKET};

/// Poses, Jacobians and velocity quantities at every evaluation point.
#[derive(Debug, Clone)]
pub struct KinematicsCache {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub poses: Vec<Pose>,
    /// Body-frame geometric Jacobians (6 × n).
    pub jacobians: Vec<Matrix6xX<f64>>,
    /// Body velocity twists `η = J q̇`.
    pub velocities: Vec<Twist>,
    /// Velocity-product accelerations `J̇ q̇`.
    pub biases: Vec<Twist>,
    /// Full `J̇` when requested.
    pub jacobian_dots: Option<Vec<Matrix6xX<f64>>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Level {
    Poses,
    Jacobians,
    Rates,
    FullRates,
}

struct State {
    g: Pose,
    j: Matrix6xX<f64>,
    jd: Matrix6xX<f64>,
    eta: Twist,
    bias: Twist,
}

struct Outputs {
    poses: Vec<Pose>,
    jac: Vec<Matrix6xX<f64>>,
    jd: Vec<Matrix6xX<f64>>,
    eta: Vec<Twist>,
    bias: Vec<Twist>,
}

fn check_state(l: &Linkage, q: &DVector<f64>, qd: Option<&DVector<f64>>) -> Result<()> {
    let n = l.dof();
    if q.len() != n {
        return Err(GvsError::Dimension {
            expected: n,
            got: q.len(),
        });
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(GvsError::NonFiniteState);
    }
    if let Some(qd) = qd {
        if qd.len() != n {
            return Err(GvsError::Dimension {
                expected: n,
                got: qd.len(),
            });
        }
        if qd.iter().any(|v| !v.is_finite()) {
            return Err(GvsError::NonFiniteState);
        }
    }
    Ok(())
}

fn run(l: &Linkage, q: &DVector<f64>, qd: &DVector<f64>, level: Level) -> Outputs {
    let n = l.dof();
    let np = l.points.len();
    let with_j = level != Level::Poses;
    let with_rates = matches!(level, Level::Rates | Level::FullRates);
    let full = level == Level::FullRates;
    let zeros = || Matrix6xX::zeros(if with_j { n } else { 0 });
    let zeros_d = || Matrix6xX::zeros(if full { n } else { 0 });
    let mut out = Outputs {
        poses: vec![Pose::identity(); np],
        jac: if with_j { vec![Matrix6xX::zeros(n); np] } else { Vec::new() },
        jd: if full { vec![Matrix6xX::zeros(n); np] } else { Vec::new() },
        eta: vec![Twist::zeros(); if with_rates { np } else { 0 }],
        bias: vec![Twist::zeros(); if with_rates { np } else { 0 }],
    };
    let mut s = State {
        g: Pose::identity(),
        j: zeros(),
        jd: zeros_d(),
        eta: Twist::zeros(),
        bias: Twist::zeros(),
    };

    // Apply g ← g·G with G = exp(Ω), where Ω depends on the coordinates in
    // `range` through `sens` (∂Ω/∂q) and `sens_dot` (d/dt of it).
    let advance = |s: &mut State,
                   omega: &Twist,
                   range: &std::ops::Range<usize>,
                   sens: &Matrix6xX<f64>,
                   sens_dot: Option<&Matrix6xX<f64>>| {
        let big_g = exp_se3(omega);
        s.g = s.g * big_g;
        if !with_j {
            return;
        }
        let adi = big_g.adjoint_inv();
        let t = tangent_exp(omega);
        let ts = t * sens;
        let j_old = std::mem::replace(&mut s.j, Matrix6xX::zeros(0));
        let mut j = adi * &j_old;
        { let mut v = j.columns_mut(range.start, range.len()); v += &ts; }
        s.j = j;
        if !with_rates {
            return;
        }
        let qdr = qd.rows(range.start, range.len());
        let omega_dot: Twist = sens * qdr;
        let eta_rel = t * omega_dot;
        let tdot = tangent_exp_rate(omega, &omega_dot);
        let eta_t = adi * s.eta;
        let mut extra = tdot * omega_dot;
        if let Some(sd) = sens_dot {
            extra += t * (sd * qdr);
        }
        s.bias = adi * s.bias - ad(&eta_rel) * eta_t + extra;
        s.eta = eta_t + eta_rel;
        if full {
            let ad_rel = ad(&eta_rel);
            let mut jd = adi * &s.jd - ad_rel * (adi * &j_old);
            let mut local = tdot * sens;
            if let Some(sd) = sens_dot {
                local += t * sd;
            }
            { let mut v = jd.columns_mut(range.start, range.len()); v += &local; }
            s.jd = jd;
        }
    };

    for op in &l.program {
        match op {
            Op::Load { from, offset } => {
                match from {
                    Some(p) => {
                        s.g = out.poses[*p];
                        if with_j {
                            s.j = out.jac[*p].clone();
                        }
                        if with_rates {
                            s.eta = out.eta[*p];
                            s.bias = out.bias[*p];
                        }
                        if full {
                            s.jd = out.jd[*p].clone();
                        }
                    }
                    None => {
                        s.g = Pose::identity();
                        s.j = zeros();
                        s.jd = zeros_d();
                        s.eta = Twist::zeros();
                        s.bias = Twist::zeros();
                    }
                }
                if *offset != Pose::identity() {
                    s.g = s.g * *offset;
                    if with_j {
                        let adi: Matrix6<f64> = offset.adjoint_inv();
                        s.j = adi * &s.j;
                        if with_rates {
                            s.eta = adi * s.eta;
                            s.bias = adi * s.bias;
                        }
                        if full {
                            s.jd = adi * &s.jd;
                        }
                    }
                }
            }
            Op::Joint { q: range, phi } => {
                let omega: Twist = phi * q.rows(range.start, range.len());
                advance(&mut s, &omega, range, phi, None);
            }
            Op::Magnus {
                q: range,
                h,
                phi_a,
                phi_b,
                xi_a,
                xi_b,
            } => {
                let qr = q.rows(range.start, range.len());
                let xa: Twist = phi_a * qr + xi_a;
                let xb: Twist = phi_b * qr + xi_b;
                let c = MAGNUS_BRACKET * h * h;
                let omega = (xa + xb) * (0.5 * h) + ad(&xa) * xb * c;
                if !with_j {
                    s.g = s.g * exp_se3(&omega);
                    continue;
                }
                let sens = (phi_a + phi_b) * (0.5 * h) + (ad(&xa) * phi_b - ad(&xb) * phi_a) * c;
                if with_rates {
                    let qdr = qd.rows(range.start, range.len());
                    let xad: Twist = phi_a * qdr;
                    let xbd: Twist = phi_b * qdr;
                    let sens_dot = (ad(&xad) * phi_b - ad(&xbd) * phi_a) * c;
                    advance(&mut s, &omega, range, &sens, Some(&sens_dot));
                } else {
                    advance(&mut s, &omega, range, &sens, None);
                }
            }
            Op::Store(p) => {
                out.poses[*p] = s.g;
                if with_j {
                    out.jac[*p] = s.j.clone();
                }
                if with_rates {
                    out.eta[*p] = s.eta;
                    out.bias[*p] = s.bias;
                }
                if full {
                    out.jd[*p] = s.jd.clone();
                }
            }
        }
    }
    out
}

/// Poses of all evaluation points in the base frame.
pub fn forward_kinematics(l: &Linkage, q: &DVector<f64>) -> Result<Vec<Pose>> {
    check_state(l, q, None)?;
    Ok(run(l, q, &DVector::zeros(0), Level::Poses).poses)
}

/// Body-frame Jacobians of all evaluation points.
pub fn jacobian(l: &Linkage, q: &DVector<f64>) -> Result<Vec<Matrix6xX<f64>>> {
    check_state(l, q, None)?;
    Ok(run(l, q, &DVector::zeros(0), Level::Jacobians).jac)
}

/// Time derivatives of the Jacobians along `q̇`.
pub fn jacobian_dot(l: &Linkage, q: &DVector<f64>, qd: &DVector<f64>) -> Result<Vec<Matrix6xX<f64>>> {
    check_state(l, q, Some(qd))?;
    Ok(run(l, q, qd, Level::FullRates).jd)
}

impl KinematicsCache {
    /// Poses, Jacobians, velocities and `J̇q̇` at `(q, q̇)`; full `J̇` if asked.
    pub fn new(l: &Linkage, q: &DVector<f64>, qd: &DVector<f64>, with_jdot: bool) -> Result<Self> {
        check_state(l, q, Some(qd))?;
        let out = run(l, q, qd, if with_jdot { Level::FullRates } else { Level::Rates });
        Ok(Self {
            q: q.clone(),
            qd: qd.clone(),
            poses: out.poses,
            jacobians: out.jac,
            velocities: out.eta,
            biases: out.bias,
            jacobian_dots: with_jdot.then_some(out.jd),
        })
    }

    /// Configuration-only cache (velocities zero).
    pub fn at_rest(l: &Linkage, q: &DVector<f64>) -> Result<Self> {
        Self::new(l, q, &DVector::zeros(l.dof()), false)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::Joint;
    use crate::linkage::{LinkageBuilder, RigidBody, SoftDivision};
    use crate::rod::{CrossSection, Material, Mode, ReferenceStrain, StrainBasisSpec};
    use crate::se3::log_se3;
    use nalgebra::Vector3;

    fn straight_rod(l: f64, basis: StrainBasisSpec) -> Linkage {
        let mut b = LinkageBuilder::new();
        b.add_soft_link(
            "rod",
            None,
            Joint::fixed(),
            vec![SoftDivision::new(l, CrossSection::circular(0.01), Material::new(1e6, 0.5, 1000.0), basis)],
        )
        .unwrap();
        b.finalize().unwrap()
    }

    #[test]
    fn reference_configuration() {
        let l = straight_rod(0.7, StrainBasisSpec::all_modes(2, 1));
        let poses = forward_kinematics(&l, &DVector::zeros(l.dof())).unwrap();
        let tip = poses[l.tip_point(0)];
        assert!((tip.translation - Vector3::new(0.7, 0.0, 0.0)).norm() < 1e-14);
        assert!((tip.rotation - nalgebra::Matrix3::identity()).norm() < 1e-14);
    }

    #[test]
    fn constant_curvature_arc() {
        let len = 0.5;
        let l = straight_rod(len, StrainBasisSpec::new().with_mode(Mode::BendZ, 0));
        let kappa = 2.3;
        let q = l.to_internal(&DVector::from_element(1, kappa));
        let tip = forward_kinematics(&l, &q).unwrap()[l.tip_point(0)];
        let expect = Vector3::new((kappa * len).sin() / kappa, (1.0 - (kappa * len).cos()) / kappa, 0.0);
        assert!((tip.translation - expect).norm() < 1e-14);
    }

    #[test]
    fn revolute_quarter_turn() {
        let mut b = LinkageBuilder::new();
        b.add_rigid_link("arm", None, Joint::revolute(Vector3::z()), RigidBody::massless(1.0))
            .unwrap();
        let l = b.finalize().unwrap();
        let q = DVector::from_element(1, std::f64::consts::FRAC_PI_2);
        let tip = forward_kinematics(&l, &q).unwrap()[l.tip_point(0)];
        assert!((tip.translation - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn nan_rejected() {
        let l = straight_rod(1.0, StrainBasisSpec::kirchhoff(0));
        let q = DVector::from_element(3, f64::NAN);
        assert!(matches!(forward_kinematics(&l, &q), Err(GvsError::NonFiniteState)));
    }

    #[test]
    fn precurved_reference() {
        let mut b = LinkageBuilder::new();
        let spec = StrainBasisSpec::new()
            .with_mode(Mode::BendY, 0)
            .with_reference(ReferenceStrain::constant(Twist::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0)));
        b.add_soft_link(
            "rod",
            None,
            Joint::fixed(),
            vec![SoftDivision::new(1.0, CrossSection::circular(0.01), Material::new(1e6, 0.5, 1.0), spec)],
        )
        .unwrap();
        let l = b.finalize().unwrap();
        let tip = forward_kinematics(&l, &DVector::zeros(1)).unwrap()[l.tip_point(0)];
        assert!((tip.translation - Vector3::new(1f64.sin(), 1.0 - 1f64.cos(), 0.0)).norm() < 1e-14);
    }

    #[test]
    fn jacobian_matches_differences_on_rod() {
        let l = straight_rod(0.4, StrainBasisSpec::all_modes(2, 1));
        let n = l.dof();
        let q = DVector::from_fn(n, |i, _| 0.3 * ((i as f64) * 1.7).sin());
        let jac = jacobian(&l, &q).unwrap();
        let p = l.tip_point(0);
        let g0 = forward_kinematics(&l, &q).unwrap()[p];
        for i in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += 1e-6;
            qm[i] -= 1e-6;
            let gp = forward_kinematics(&l, &qp).unwrap()[p];
            let gm = forward_kinematics(&l, &qm).unwrap()[p];
            let fd = (log_se3(&(g0.inverse() * gp)).unwrap() - log_se3(&(g0.inverse() * gm)).unwrap())
                / 2e-6;
            let err = (fd - jac[p].column(i)).norm();
            assert!(err < 1e-6 * (1.0 + fd.norm()), "column {i}: {err}");
        }
    }
}
