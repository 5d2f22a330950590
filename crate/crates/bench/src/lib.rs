//! Reference models shared by the benchmarks.

use gvs_core::{
    CrossSection, Joint, Linkage, LinkageBuilder, LoadFrame, Material, Mode, Profile, RigidBody,
    SoftDivision, StrainBasisSpec, Twist,
};
use nalgebra::Vector3;

/// Clamped 100 m beam with a quartic bending basis and a follower tip force.
pub fn follower_cantilever() -> Linkage {
    let mut b = LinkageBuilder::new();
    let div = SoftDivision::new(
        100.0,
        CrossSection::circular(0.285),
        Material::new(6.75e9, 0.3, 7800.0),
        StrainBasisSpec::new().with_mode(Mode::BendY, 4),
    )
    .with_gauss_points(15);
    let beam = b.add_soft_link("beam", None, Joint::fixed(), vec![div]).unwrap();
    b.add_point_load(
        beam,
        1.0,
        Twist::new(0.0, 0.0, 0.0, 0.0, 0.0, -130e3),
        LoadFrame::Follower,
        Profile::Constant(1.0),
    )
    .unwrap();
    b.finalize().unwrap()
}

/// Revolute base, rigid arm and a two-division soft rod with all six modes.
pub fn hybrid_arm() -> Linkage {
    let mut b = LinkageBuilder::new();
    b.gravity(Vector3::new(0.0, 0.0, -9.81));
    let steel = Material::new(2e11, 0.3, 7800.0);
    let arm = RigidBody::rod(0.3, &CrossSection::circular(0.01), &steel).unwrap();
    let base = b.add_rigid_link("arm", None, Joint::revolute(Vector3::z()), arm).unwrap();
    let soft = Material::new(1e6, 0.5, 1000.0).with_viscosity(100.0);
    let divs = (0..2)
        .map(|_| {
            SoftDivision::new(
                0.25,
                CrossSection::tapered_circular(0.02, 0.015),
                soft,
                StrainBasisSpec::all_modes(2, 1),
            )
        })
        .collect();
    b.add_soft_link("rod", Some(base), Joint::revolute(Vector3::y()), divs).unwrap();
    b.finalize().unwrap()
}
