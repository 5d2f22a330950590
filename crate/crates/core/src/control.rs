//! Task-space PD inverse-dynamics control with bounded actuation.

use nalgebra::{DMatrix, DVector, Matrix6};

use crate::dynamics::ControlContext;
use crate::error::{GvsError, Result};
use crate::linkage::Linkage;
use crate::se3::{ad, exp_se3, log_se3, Pose, Twist};

/// Desired pose history of the controlled frame.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetPath {
    /// Constant pose.
    Fixed(Pose),
    /// `g(t) = exp(tξ) g₀ exp(−tξ)`: the reference frame is carried around the
    /// screw `ξ` (world frame) while keeping its attitude relative to the
    /// rotating plane.
    Orbit { reference: Pose, axis: Twist },
}

impl TargetPath {
    /// Desired pose, body velocity twist and body acceleration twist at `t`.
    pub fn sample(&self, t: f64) -> (Pose, Twist, Twist) {
        match self {
            TargetPath::Fixed(g) => (*g, Twist::zeros(), Twist::zeros()),
            TargetPath::Orbit { reference, axis } => {
                let e = exp_se3(&(axis * t));
                let g = e * *reference * e.inverse();
                // Body velocity (Ad(g⁻¹) − I)ξ; its rate is ad(ξ) applied to it.
                let eta = g.adjoint_inv() * axis - axis;
                let eta_dot = ad(axis) * eta;
                (g, eta, eta_dot)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskTarget {
    pub path: TargetPath,
    /// Evaluation point index of the controlled frame.
    pub point: usize,
    pub kp: Matrix6<f64>,
    pub kd: Matrix6<f64>,
    /// Solve without actuator bounds (pseudoinverse).
    pub unbounded: bool,
}

impl TaskTarget {
    pub fn new(path: TargetPath, point: usize, kp: f64, kd: f64) -> Self {
        Self {
            path,
            point,
            kp: Matrix6::identity() * kp,
            kd: Matrix6::identity() * kd,
            unbounded: false,
        }
    }

    /// Desired acceleration twist of the controlled frame given its pose and velocity.
    pub fn feedback(&self, t: f64, pose: &Pose, velocity: &Twist) -> Result<Twist> {
        let (g, eta_ref, eta_ref_dot) = self.path.sample(t);
        let err = pose.inverse() * g;
        let ad_e = err.adjoint();
        let eta_ref_local = ad_e * eta_ref;
        Ok(ad_e * eta_ref_dot + self.kd * (eta_ref_local - velocity) + self.kp * log_se3(&err)?)
    }

    /// Position and rotation error of the controlled frame.
    pub fn error(&self, t: f64, pose: &Pose) -> Result<(f64, f64)> {
        let (g, _, _) = self.path.sample(t);
        let rel = pose.inverse() * g;
        let w = log_se3(&Pose::new(rel.rotation, Default::default()))?;
        Ok(((g.translation - pose.translation).norm(), w.fixed_rows::<3>(0).norm()))
    }
}

#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub u: DVector<f64>,
    /// Desired acceleration twist.
    pub command: Twist,
    /// Norm of the unmet part of the commanded acceleration.
    pub residual: f64,
}

/// Actuation realizing the task-space PD law as closely as the actuator
/// bounds allow.
pub fn pd_task_control(ctx: &ControlContext<'_>, target: &TaskTarget) -> Result<ControlOutput> {
    let kin = &ctx.assembly.kin;
    let p = target.point;
    if p >= kin.len() {
        return Err(GvsError::InvalidModel(format!("control point {p} out of range")));
    }
    let jt = &kin.jacobians[p];
    let command = target.feedback(ctx.assembly.t, &kin.poses[p], &kin.velocities[p])?;
    let drift = jt * &ctx.drift + kin.biases[p];
    let rhs = DVector::from_iterator(6, (command - drift).iter().copied());
    let jt_dyn = DMatrix::from_iterator(6, jt.ncols(), jt.iter().copied());
    let a = jt_dyn * &ctx.gain;
    let (lo, hi) = actuator_bounds(ctx.linkage);
    let u = if target.unbounded {
        a.clone()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| GvsError::InvalidModel(e.to_string()))?
    } else {
        bounded_least_squares(&a, &rhs, &lo, &hi)
    };
    let residual = (&a * &u - &rhs).norm();
    Ok(ControlOutput { u, command, residual })
}

pub fn actuator_bounds(l: &Linkage) -> (DVector<f64>, DVector<f64>) {
    let acts = l.actuators();
    (
        DVector::from_iterator(acts.len(), acts.iter().map(|a| a.lower_bound())),
        DVector::from_iterator(acts.len(), acts.iter().map(|a| a.upper_bound())),
    )
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    a.clone().svd(true, true).solve(b, 1e-12).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// `min ‖A x − b‖₂` subject to `lo ≤ x ≤ hi` (active-set method).
pub fn bounded_least_squares(a: &DMatrix<f64>, b: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    #[derive(Clone, Copy, PartialEq)]
    enum S {
        Free,
        Lower,
        Upper,
    }
    let mut state: Vec<S> = (0..n)
        .map(|i| if lo[i].is_finite() { S::Lower } else if hi[i].is_finite() { S::Upper } else { S::Free })
        .collect();
    let mut x = DVector::from_fn(n, |i, _| match state[i] {
        S::Lower => lo[i],
        S::Upper => hi[i],
        S::Free => 0.0,
    });
    let scale = a.amax().max(1e-300) * (b.amax() + 1.0);
    let tol = 1e-12 * scale;
    let solve_free = |state: &[S], x: &DVector<f64>| -> DVector<f64> {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == S::Free).collect();
        let mut r = b.clone();
        for i in 0..n {
            if state[i] != S::Free {
                r.axpy(-x[i], &a.column(i), 1.0);
            }
        }
        let af = a.select_columns(&free);
        let z = least_squares(&af, &r);
        let mut out = x.clone();
        for (k, &i) in free.iter().enumerate() {
            out[i] = z[k];
        }
        out
    };
    if state.contains(&S::Free) {
        let z = solve_free(&state, &x);
        for i in 0..n {
            if state[i] == S::Free {
                x[i] = z[i].clamp(lo[i], hi[i]);
            }
        }
    }
    for _ in 0..(10 * n + 20) {
        let w = a.tr_mul(&(b - a * &x));
        let mut best = None;
        let mut best_val = tol;
        for i in 0..n {
            let v = match state[i] {
                S::Lower if hi[i] > lo[i] => w[i],
                S::Upper if hi[i] > lo[i] => -w[i],
                _ => 0.0,
            };
            if v > best_val {
                best_val = v;
                best = Some(i);
            }
        }
        let Some(enter) = best else {
            break;
        };
        state[enter] = S::Free;
        for _ in 0..(n + 1) {
            let z = solve_free(&state, &x);
            let mut alpha: f64 = 1.0;
            let mut hit = None;
            for i in 0..n {
                if state[i] != S::Free {
                    continue;
                }
                let d = z[i] - x[i];
                let step = if z[i] < lo[i] {
                    (lo[i] - x[i]) / d
                } else if z[i] > hi[i] {
                    (hi[i] - x[i]) / d
                } else {
                    continue;
                };
                let step = step.max(0.0);
                if step < alpha {
                    alpha = step;
                    hit = Some(i);
                }
            }
            for i in 0..n {
                if state[i] == S::Free {
                    x[i] += alpha * (z[i] - x[i]);
                }
            }
            let Some(_) = hit else {
                break;
            };
            for i in 0..n {
                if state[i] != S::Free {
                    continue;
                }
                if x[i] <= lo[i] + 1e-14 * (1.0 + lo[i].abs()) && z[i] < x[i] {
                    x[i] = lo[i];
                    state[i] = S::Lower;
                } else if x[i] >= hi[i] - 1e-14 * (1.0 + hi[i].abs()) && z[i] > x[i] {
                    x[i] = hi[i];
                    state[i] = S::Upper;
                }
            }
        }
    }
    for i in 0..n {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
    x
}
