//! Named custom-force hooks that scenario files can reference.

use std::collections::BTreeMap;

use gvs_core::linkage::PointKind;
use gvs_core::se3::twist;
use gvs_core::{ForceHook, GvsError, HookContext};
use nalgebra::{DVector, Vector3};

use crate::error::CliError;

type Factory = fn(&BTreeMap<String, f64>) -> Result<ForceHook, CliError>;

/// Registered hook names with their constructors.
pub fn registry() -> BTreeMap<&'static str, Factory> {
    let mut r: BTreeMap<&'static str, Factory> = BTreeMap::new();
    r.insert("quadratic_drag", quadratic_drag);
    r
}

pub fn build_hook(name: &str, params: &BTreeMap<String, f64>) -> Result<ForceHook, CliError> {
    let reg = registry();
    let f = reg.get(name).ok_or_else(|| {
        CliError::Parse(format!(
            "unknown hook '{name}' (registered: {})",
            reg.keys().copied().collect::<Vec<_>>().join(", ")
        ))
    })?;
    f(params)
}

fn param(params: &BTreeMap<String, f64>, hook: &str, key: &str, default: Option<f64>) -> Result<f64, CliError> {
    match (params.get(key), default) {
        (Some(v), _) => Ok(*v),
        (None, Some(d)) => Ok(d),
        (None, None) => Err(CliError::Parse(format!("hook '{hook}' needs parameter '{key}'"))),
    }
}

/// Resistive drag on soft cross-sections: per unit length the force is
/// `−c_n |v_n| v_n − c_t |v_t| v_t`, with `v_n` and `v_t` the velocity
/// components normal and tangent to the rod axis.
///
/// Parameters: `normal` (N·s²/m³), `tangent` (default 0), `fluid_velocity_{x,y,z}`.
fn quadratic_drag(params: &BTreeMap<String, f64>) -> Result<ForceHook, CliError> {
    let known = ["normal", "tangent", "fluid_velocity_x", "fluid_velocity_y", "fluid_velocity_z"];
    if let Some(k) = params.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(CliError::Parse(format!("hook 'quadratic_drag' has no parameter '{k}'")));
    }
    let cn = param(params, "quadratic_drag", "normal", None)?;
    let ct = param(params, "quadratic_drag", "tangent", Some(0.0))?;
    let flow = Vector3::new(
        param(params, "quadratic_drag", "fluid_velocity_x", Some(0.0))?,
        param(params, "quadratic_drag", "fluid_velocity_y", Some(0.0))?,
        param(params, "quadratic_drag", "fluid_velocity_z", Some(0.0))?,
    );
    if cn < 0.0 || ct < 0.0 {
        return Err(CliError::Parse("drag coefficients must be non-negative".into()));
    }
    Ok(ForceHook::new("quadratic_drag", move |ctx: &HookContext<'_>| {
        let l = ctx.linkage;
        let mut out = DVector::zeros(l.dof());
        for (i, p) in l.points().iter().enumerate() {
            if p.kind != PointKind::Gauss || p.weight == 0.0 {
                continue;
            }
            let rt = ctx.kin.poses[i].rotation.transpose();
            let eta = &ctx.kin.velocities[i];
            let v = Vector3::new(eta[3], eta[4], eta[5]) - rt * flow;
            let vt = Vector3::new(v.x, 0.0, 0.0);
            let vn = Vector3::new(0.0, v.y, v.z);
            let f = -(vn * (cn * vn.norm()) + vt * (ct * vt.norm())) * p.weight;
            if f.iter().any(|x| !x.is_finite()) {
                return Err(GvsError::CustomForceNaN);
            }
            out.gemv_tr(1.0, &ctx.kin.jacobians[i], &twist(&Vector3::zeros(), &f), 1.0);
        }
        Ok(out)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_hook_is_reported() {
        let e = build_hook("magnetism", &BTreeMap::new()).unwrap_err();
        assert!(e.to_string().contains("quadratic_drag"));
    }

    #[test]
    fn drag_needs_a_normal_coefficient() {
        assert!(build_hook("quadratic_drag", &BTreeMap::new()).is_err());
        let mut p = BTreeMap::new();
        p.insert("normal".to_string(), 2.0);
        assert!(build_hook("quadratic_drag", &p).is_ok());
        p.insert("bogus".to_string(), 1.0);
        assert!(build_hook("quadratic_drag", &p).is_err());
    }
}
