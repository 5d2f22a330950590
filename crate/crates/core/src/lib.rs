//! Geometric variable-strain Cosserat rod models for hybrid rigid-soft
//! multibody robots.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod constraints;
pub mod control;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod joint;
pub mod kinematics;
pub mod linkage;
pub mod optimize;
pub mod profile;
pub mod quadrature;
pub mod rod;
pub mod se3;
pub mod statics;

pub use assembly::Assembly;
pub use control::{pd_task_control, ControlOutput, TargetPath, TaskTarget};
pub use dynamics::{simulate, ControlContext, DynamicOptions, Input, Integrator, Trajectory};
pub use energy::{energy, momentum, EnergyReport, Momentum};
pub use error::{GvsError, Result};
pub use joint::{Joint, JointControl, JointKind};
pub use kinematics::{forward_kinematics, jacobian, jacobian_dot, KinematicsCache};
pub use linkage::{
    Actuator, Cable, ClosureSide, ContactPair, ContactProxy, ContactTarget, ForceHook, HookContext,
    LinkId, Linkage, LinkageBuilder, LoadFrame, RigidBody, SoftDivision,
};
pub use optimize::{pattern_search, PatternSearchOptions, PatternSearchResult, PlacementProblem};
pub use profile::Profile;
pub use rod::{CrossSection, Material, Mode, ReferenceStrain, SectionShape, StrainBasisSpec};
pub use se3::{Pose, Twist};
pub use statics::{static_equilibrium, static_sweep, StaticOptions, StaticSolution};
