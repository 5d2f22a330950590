//! Loop-closure residuals `Φ_c(q)` and their Jacobians `A(q)`.

use nalgebra::{DMatrix, DVector, Matrix6};

use crate::error::{GvsError, Result};
use crate::kinematics::KinematicsCache;
use crate::linkage::{Closure, Linkage};
use crate::se3::{log_se3, tangent_exp, Pose, Twist};

fn side_pose(kin: &KinematicsCache, point: Option<usize>) -> Pose {
    point.map(|p| kin.poses[p]).unwrap_or_default()
}

/// Relative pose `(g_a·offset)⁻¹ g_b` of one closure.
pub fn closure_relative_pose(c: &Closure, kin: &KinematicsCache) -> Pose {
    let ga = side_pose(kin, c.points[0]) * c.offset;
    ga.inverse() * side_pose(kin, c.points[1])
}

/// Stacked residuals `P·log((g_a·offset)⁻¹ g_b)`.
pub fn closure_residual(l: &Linkage, kin: &KinematicsCache) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(l.constraint_count());
    let mut row = 0;
    for c in &l.closures {
        let xi = log_se3(&closure_relative_pose(c, kin))?;
        let m = c.constraint_count();
        out.rows_mut(row, m).copy_from(&(&c.projector * xi));
        row += m;
    }
    Ok(out)
}

/// Residuals and Jacobian `A = ∂Φ_c/∂q` (needs Jacobians in the cache).
pub fn closure_jacobian(l: &Linkage, kin: &KinematicsCache) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = l.dof();
    let mc = l.constraint_count();
    let mut phi = DVector::zeros(mc);
    let mut a = DMatrix::zeros(mc, n);
    let mut row = 0;
    for c in &l.closures {
        let rel = closure_relative_pose(c, kin);
        let xi: Twist = log_se3(&rel)?;
        let tinv = tangent_exp(&xi)
            .try_inverse()
            .ok_or(GvsError::LogBranchSingularity)?;
        let ja = match c.points[0] {
            Some(p) => rel.adjoint_inv() * (c.offset.adjoint_inv() * &kin.jacobians[p]),
            None => nalgebra::Matrix6xX::zeros(n),
        };
        let jb = match c.points[1] {
            Some(p) => kin.jacobians[p].clone(),
            None => nalgebra::Matrix6xX::zeros(n),
        };
        let pt: DMatrix<f64> = &c.projector * DMatrix::from_iterator(6, 6, Matrix6::iter(&tinv).copied());
        let m = c.constraint_count();
        phi.rows_mut(row, m).copy_from(&(&c.projector * xi));
        let diff = jb - ja;
        let block = &pt * DMatrix::from_iterator(6, n, diff.iter().copied());
        a.view_mut((row, 0), (m, n)).copy_from(&block);
        row += m;
    }
    Ok((phi, a))
}

/// `Ȧ q̇` by a central difference of `A` along `q̇`.
pub fn closure_jacobian_rate(l: &Linkage, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DVector<f64>> {
    let mc = l.constraint_count();
    let speed = qd.amax();
    if mc == 0 || speed == 0.0 {
        return Ok(DVector::zeros(mc));
    }
    let eps = 1e-6 * (1.0 + q.amax()) / speed;
    let eval = |s: f64| -> Result<DVector<f64>> {
        let qs = q + qd * s;
        let kin = KinematicsCache::at_rest(l, &qs)?;
        let (_, a) = closure_jacobian(l, &kin)?;
        Ok(a * qd)
    };
    Ok((eval(eps)? - eval(-eps)?) / (2.0 * eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::Joint;
    use crate::linkage::{ClosureSide, LinkageBuilder, RigidBody};
    use nalgebra::Vector3;

    /// Planar four-bar: ground, crank, coupler, rocker closed to ground.
    fn four_bar() -> Linkage {
        let mut b = LinkageBuilder::new();
        let crank = b
            .add_rigid_link("crank", None, Joint::revolute(Vector3::z()), RigidBody::massless(1.0))
            .unwrap();
        let coupler = b
            .add_rigid_link("coupler", Some(crank), Joint::revolute(Vector3::z()), RigidBody::massless(1.0))
            .unwrap();
        b.add_loop_closure(
            ClosureSide { link: None, x: 0.0 },
            ClosureSide { link: Some(coupler), x: 1.0 },
            Joint::revolute(Vector3::z()),
            None,
        )
        .unwrap();
        b.finalize().unwrap()
    }

    #[test]
    fn reference_is_assembled() {
        let l = four_bar();
        assert_eq!(l.constraint_count(), 5);
        let kin = KinematicsCache::at_rest(&l, &DVector::zeros(2)).unwrap();
        assert!(closure_residual(&l, &kin).unwrap().amax() < 1e-15);
    }

    #[test]
    fn jacobian_matches_differences() {
        let l = four_bar();
        let q = DVector::from_vec(vec![0.3, -0.7]);
        let kin = KinematicsCache::at_rest(&l, &q).unwrap();
        let (_, a) = closure_jacobian(&l, &kin).unwrap();
        for i in 0..2 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += 1e-6;
            qm[i] -= 1e-6;
            let rp = closure_residual(&l, &KinematicsCache::at_rest(&l, &qp).unwrap()).unwrap();
            let rm = closure_residual(&l, &KinematicsCache::at_rest(&l, &qm).unwrap()).unwrap();
            let fd = (rp - rm) / 2e-6;
            assert!((fd - a.column(i)).amax() < 1e-8);
        }
    }
}
