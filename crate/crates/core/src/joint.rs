//! Lumped joints modeled as constant-strain unit segments `g = exp(Φ_j q_j)`.

use nalgebra::{Matrix6xX, Vector3};

use crate::error::{GvsError, Result};
use crate::profile::Profile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointKind {
    Fixed,
    Revolute,
    Prismatic,
    Helical,
    Cylindrical,
    Universal,
    Planar,
    Spherical,
    Free,
}

impl JointKind {
    pub const ALL: [JointKind; 9] = [
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

    pub fn dof(self) -> usize {
        match self {
            JointKind::Fixed => 0,
            JointKind::Revolute | JointKind::Prismatic | JointKind::Helical => 1,
            JointKind::Cylindrical | JointKind::Universal => 2,
            JointKind::Planar | JointKind::Spherical => 3,
            JointKind::Free => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            JointKind::Fixed => "fixed",
            JointKind::Revolute => "revolute",
            JointKind::Prismatic => "prismatic",
            JointKind::Helical => "helical",
            JointKind::Cylindrical => "cylindrical",
            JointKind::Universal => "universal",
            JointKind::Planar => "planar",
            JointKind::Spherical => "spherical",
            JointKind::Free => "free",
        }
    }

    pub fn from_name(s: &str) -> Option<JointKind> {
        JointKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Joints whose coordinates are exponential coordinates of a rotation and
    /// may be re-centered when the angle passes π.
    pub fn has_rotation_chart(self) -> bool {
        matches!(self, JointKind::Spherical | JointKind::Free)
    }
}

/// How a joint's coordinates are driven.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum JointControl {
    #[default]
    Passive,
    /// Coordinates follow `value_i · profile_i(t)`; removed from the unknowns.
    Coordinate(Vec<(f64, Profile)>),
    /// Each coordinate receives an actuation column in `B`.
    Wrench,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub kind: JointKind,
    /// Main axis: rotation/translation axis, or the plane normal for planar joints.
    pub axis: Vector3<f64>,
    /// Second rotation axis of a universal joint.
    pub axis2: Vector3<f64>,
    /// Helical pitch (m/rad).
    pub pitch: f64,
    /// Per-coordinate spring stiffness (empty means unsprung).
    pub stiffness: Vec<f64>,
    /// Per-coordinate viscous damping (empty means undamped).
    pub damping: Vec<f64>,
    pub control: JointControl,
}

impl Joint {
    pub fn new(kind: JointKind) -> Self {
        Self {
            kind,
            axis: Vector3::z(),
            axis2: Vector3::y(),
            pitch: 0.0,
            stiffness: Vec::new(),
            damping: Vec::new(),
            control: JointControl::Passive,
        }
    }

    pub fn fixed() -> Self {
        Self::new(JointKind::Fixed)
    }

    pub fn revolute(axis: Vector3<f64>) -> Self {
        Self::new(JointKind::Revolute).with_axis(axis)
    }

    pub fn prismatic(axis: Vector3<f64>) -> Self {
        Self::new(JointKind::Prismatic).with_axis(axis)
    }

    pub fn helical(axis: Vector3<f64>, pitch: f64) -> Self {
        let mut j = Self::new(JointKind::Helical).with_axis(axis);
        j.pitch = pitch;
        j
    }

    pub fn cylindrical(axis: Vector3<f64>) -> Self {
        Self::new(JointKind::Cylindrical).with_axis(axis)
    }

    pub fn universal(axis: Vector3<f64>, axis2: Vector3<f64>) -> Self {
        let mut j = Self::new(JointKind::Universal).with_axis(axis);
        j.axis2 = axis2;
        j
    }

    pub fn planar(normal: Vector3<f64>) -> Self {
        Self::new(JointKind::Planar).with_axis(normal)
    }

    pub fn spherical() -> Self {
        Self::new(JointKind::Spherical)
    }

    pub fn free() -> Self {
        Self::new(JointKind::Free)
    }

    pub fn with_axis(mut self, axis: Vector3<f64>) -> Self {
        self.axis = axis;
        self
    }

    pub fn with_stiffness(mut self, k: Vec<f64>) -> Self {
        self.stiffness = k;
        self
    }

    pub fn with_damping(mut self, d: Vec<f64>) -> Self {
        self.damping = d;
        self
    }

    pub fn with_control(mut self, control: JointControl) -> Self {
        self.control = control;
        self
    }

    pub fn dof(&self) -> usize {
        self.kind.dof()
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |a: &Vector3<f64>, what: &str| -> Result<()> {
            if (a.norm() - 1.0).abs() > 1e-9 {
                Err(GvsError::InvalidModel(format!(
                    "{} joint {what} must be a unit vector, got norm {}",
                    self.kind.name(),
                    a.norm()
                )))
            } else {
                Ok(())
            }
        };
        match self.kind {
            JointKind::Revolute
            | JointKind::Prismatic
            | JointKind::Helical
            | JointKind::Cylindrical
            | JointKind::Planar => unit(&self.axis, "axis")?,
            JointKind::Universal => {
                unit(&self.axis, "axis")?;
                unit(&self.axis2, "second axis")?;
                if self.axis.cross(&self.axis2).norm() < 1e-6 {
                    return Err(GvsError::InvalidModel(
                        "universal joint axes must not be parallel".into(),
                    ));
                }
            }
            _ => {}
        }
        let n = self.dof();
        for (v, what) in [(&self.stiffness, "stiffness"), (&self.damping, "damping")] {
            if !v.is_empty() && v.len() != n {
                return Err(GvsError::InvalidModel(format!(
                    "{} joint {what} needs {n} entries, got {}",
                    self.kind.name(),
                    v.len()
                )));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(GvsError::InvalidModel(format!("negative joint {what}")));
            }
        }
        if let JointControl::Coordinate(c) = &self.control {
            if c.len() != n {
                return Err(GvsError::InvalidModel(format!(
                    "coordinate-controlled {} joint needs {n} profiles, got {}",
                    self.kind.name(),
                    c.len()
                )));
            }
        }
        Ok(())
    }

    /// Constant screw basis `Φ_j` (6 × dof), columns are unit screws.
    pub fn screw_basis(&self) -> Matrix6xX<f64> {
        let mut phi = Matrix6xX::zeros(self.dof());
        let a = self.axis;
        let set = |phi: &mut Matrix6xX<f64>, col: usize, ang: Vector3<f64>, lin: Vector3<f64>| {
            phi.fixed_view_mut::<3, 1>(0, col).copy_from(&ang);
            phi.fixed_view_mut::<3, 1>(3, col).copy_from(&lin);
        };
        let z = Vector3::zeros();
        match self.kind {
            JointKind::Fixed => {}
            JointKind::Revolute => set(&mut phi, 0, a, z),
            JointKind::Prismatic => set(&mut phi, 0, z, a),
            JointKind::Helical => set(&mut phi, 0, a, a * self.pitch),
            JointKind::Cylindrical => {
                set(&mut phi, 0, a, z);
                set(&mut phi, 1, z, a);
            }
            JointKind::Universal => {
                set(&mut phi, 0, a, z);
                set(&mut phi, 1, self.axis2, z);
            }
            JointKind::Planar => {
                let (e1, e2) = plane_basis(&a);
                set(&mut phi, 0, a, z);
                set(&mut phi, 1, z, e1);
                set(&mut phi, 2, z, e2);
            }
            JointKind::Spherical => {
                for i in 0..3 {
                    set(&mut phi, i, Vector3::ith(i, 1.0), z);
                }
            }
            JointKind::Free => {
                for i in 0..6 {
                    phi[(i, i)] = 1.0;
                }
            }
        }
        phi
    }
}

/// Two unit vectors completing `n` to a right-handed orthonormal frame.
pub fn plane_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (helper - n * n.dot(&helper)).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dof_per_kind() {
        let expected = [0, 1, 1, 1, 2, 2, 3, 3, 6];
        for (k, n) in JointKind::ALL.iter().zip(expected) {
            assert_eq!(k.dof(), n);
            assert_eq!(Joint::new(*k).screw_basis().ncols(), n);
            assert_eq!(JointKind::from_name(k.name()), Some(*k));
        }
    }

    #[test]
    fn screw_columns_are_unit() {
        for k in JointKind::ALL {
            if k == JointKind::Helical {
                continue;
            }
            let phi = Joint::new(k).screw_basis();
            for c in phi.column_iter() {
                assert!((c.norm() - 1.0).abs() < 1e-14);
            }
        }
        let h = Joint::helical(Vector3::x(), 0.01).screw_basis();
        assert_eq!(h.column(0).as_slice(), &[1.0, 0.0, 0.0, 0.01, 0.0, 0.0]);
    }

    #[test]
    fn planar_basis_for_z_normal() {
        let phi = Joint::planar(Vector3::z()).screw_basis();
        assert_eq!(phi.column(1).as_slice(), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(phi.column(2).as_slice(), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_non_unit_axis() {
        assert!(Joint::revolute(Vector3::new(0.0, 0.0, 2.0)).validate().is_err());
        assert!(Joint::revolute(Vector3::z()).validate().is_ok());
        assert!(Joint::revolute(Vector3::z())
            .with_stiffness(vec![1.0, 2.0])
            .validate()
            .is_err());
    }
}
