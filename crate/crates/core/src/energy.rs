//! Energy and momentum bookkeeping along a state.

use nalgebra::{DVector, Vector3};

use crate::assembly::generalized_mass;
use crate::error::Result;
use crate::kinematics::KinematicsCache;
use crate::linkage::Linkage;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyReport {
    pub kinetic: f64,
    pub gravitational: f64,
    pub elastic: f64,
    pub total: f64,
}

/// Kinetic `½q̇ᵀMq̇`, gravitational `−Σ m g·r` (datum at the ground origin)
/// and elastic `½qᵀKq` energy.
pub fn energy(l: &Linkage, q: &DVector<f64>, qd: &DVector<f64>) -> Result<EnergyReport> {
    let kin = KinematicsCache::at_rest(l, q)?;
    Ok(energy_from_kinematics(l, &kin, qd))
}

pub fn energy_from_kinematics(l: &Linkage, kin: &KinematicsCache, qd: &DVector<f64>) -> EnergyReport {
    let m = generalized_mass(l, kin);
    let kinetic = 0.5 * qd.dot(&(&m * qd));
    let elastic = 0.5 * kin.q.dot(&(l.stiffness() * &kin.q));
    let g = l.gravity();
    let gravitational: f64 = l
        .points()
        .iter()
        .zip(&kin.poses)
        .map(|(p, pose)| -p.inertia[(3, 3)] * g.dot(&pose.translation))
        .sum();
    EnergyReport {
        kinetic,
        gravitational,
        elastic,
        total: kinetic + gravitational + elastic,
    }
}

/// Dissipation rate `q̇ᵀDq̇` (the rate at which damping removes energy).
pub fn dissipation(l: &Linkage, qd: &DVector<f64>) -> f64 {
    qd.dot(&(l.damping() * qd))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Momentum {
    /// Total linear momentum in the world frame.
    pub linear: Vector3<f64>,
    /// Total angular momentum about the world origin.
    pub angular: Vector3<f64>,
}

/// World-frame linear and angular momentum of all lumped inertias.
pub fn momentum(l: &Linkage, q: &DVector<f64>, qd: &DVector<f64>) -> Result<Momentum> {
    let kin = KinematicsCache::new(l, q, qd, false)?;
    let mut linear = Vector3::zeros();
    let mut angular = Vector3::zeros();
    for (p, (pose, eta)) in l.points().iter().zip(kin.poses.iter().zip(&kin.velocities)) {
        let h = p.inertia * eta;
        let hl = pose.rotation * Vector3::new(h[3], h[4], h[5]);
        let ha = pose.rotation * Vector3::new(h[0], h[1], h[2]);
        linear += hl;
        angular += ha + pose.translation.cross(&hl);
    }
    Ok(Momentum { linear, angular })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::Joint;
    use crate::linkage::{LinkageBuilder, SoftDivision};
    use crate::rod::{CrossSection, Material, StrainBasisSpec};
    use crate::se3::Pose;

    fn rod(offset: Pose) -> (Linkage, f64) {
        let (len, r, rho) = (0.6, 0.02, 1100.0);
        let mut b = LinkageBuilder::new();
        let id = b
            .add_soft_link(
                "rod",
                None,
                Joint::fixed(),
                vec![SoftDivision::new(
                    len,
                    CrossSection::circular(r),
                    Material::new(1e6, 0.5, rho),
                    StrainBasisSpec::all_modes(1, 1),
                )],
            )
            .unwrap();
        b.set_offset(id, offset).unwrap();
        b.gravity(Vector3::new(0.0, 0.0, -9.81));
        let mass = rho * std::f64::consts::PI * r * r * len;
        (b.finalize().unwrap(), mass * 9.81 * len)
    }

    #[test]
    fn straight_horizontal_rod_has_zero_energy() {
        let (l, _) = rod(Pose::identity());
        let e = energy(&l, &DVector::zeros(l.dof()), &DVector::zeros(l.dof())).unwrap();
        assert_eq!(e.kinetic, 0.0);
        assert_eq!(e.elastic, 0.0);
        assert!(e.gravitational.abs() < 1e-14);
    }

    #[test]
    fn vertical_rod_potential_is_half_mgl() {
        let up = Pose::from_rotation_vector(Vector3::new(0.0, -std::f64::consts::FRAC_PI_2, 0.0), Vector3::zeros());
        let (l, mgl) = rod(up);
        let e = energy(&l, &DVector::zeros(l.dof()), &DVector::zeros(l.dof())).unwrap();
        assert!((e.gravitational - 0.5 * mgl).abs() < 1e-12 * mgl);
    }
}
