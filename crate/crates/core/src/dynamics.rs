//! Forward dynamics `M q̈ + (C + D) q̇ + K q = B u + F` with loop closures
//! (Baumgarte-stabilized), prescribed coordinates and explicit integrators.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::assembly::Assembly;
use crate::constraints::{closure_jacobian, closure_jacobian_rate};
use crate::error::{GvsError, Result};
use crate::joint::JointKind;
use crate::kinematics::KinematicsCache;
use crate::linkage::Linkage;
use crate::se3::{exp_se3, tangent_exp, Twist};

/// Factorized acceleration system at one state.
pub struct AccelerationSolver<'a> {
    l: &'a Linkage,
    free: &'a [usize],
    prescribed_acc: DVector<f64>,
    kind: Factor,
    /// Constraint right-hand side bias `−A_p q̈_p − Ȧq̇ − 2αΦ̇ − β²Φ`.
    constraint_bias: DVector<f64>,
    m_fp_qdd_p: DVector<f64>,
}

enum Factor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Kkt(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl<'a> AccelerationSolver<'a> {
    pub fn new(l: &'a Linkage, asm: &Assembly) -> Result<Self> {
        let free = &l.free[..];
        let nf = free.len();
        let n = l.dof();
        let mut qdd_p = DVector::zeros(n);
        for (i, [_, _, a]) in l.prescribed_state(asm.t, 1.0) {
            qdd_p[i] = a;
        }
        let m = &asm.mass;
        let mff = DMatrix::from_fn(nf, nf, |r, c| m[(free[r], free[c])]);
        let mq = m * &qdd_p;
        let m_fp_qdd_p = DVector::from_fn(nf, |r, _| mq[free[r]]);
        let mc = l.constraint_count();
        if mc == 0 {
            let chol = nalgebra::Cholesky::new(mff).ok_or(GvsError::SingularMassMatrix)?;
            return Ok(Self {
                l,
                free,
                prescribed_acc: qdd_p,
                kind: Factor::Chol(chol),
                constraint_bias: DVector::zeros(0),
                m_fp_qdd_p,
            });
        }
        let (phi, a) = closure_jacobian(l, &asm.kin)?;
        let adot_qd = closure_jacobian_rate(l, &asm.kin.q, &asm.kin.qd)?;
        let (alpha, beta) = l.baumgarte;
        let phidot = &a * &asm.kin.qd;
        let bias = -(&a * &qdd_p) - adot_qd - phidot * (2.0 * alpha) - phi * (beta * beta);
        let mut kkt = DMatrix::zeros(nf + mc, nf + mc);
        kkt.view_mut((0, 0), (nf, nf)).copy_from(&mff);
        for (k, &i) in free.iter().enumerate() {
            for r in 0..mc {
                kkt[(nf + r, k)] = a[(r, i)];
                kkt[(k, nf + r)] = a[(r, i)];
            }
        }
        let lu = kkt.lu();
        if !lu.is_invertible() {
            return Err(GvsError::RedundantConstraints);
        }
        Ok(Self {
            l,
            free,
            prescribed_acc: qdd_p,
            kind: Factor::Kkt(lu),
            constraint_bias: bias,
            m_fp_qdd_p,
        })
    }

    /// Full acceleration vector for generalized force `rhs` (length n).
    /// With `homogeneous`, prescribed accelerations and constraint biases
    /// are dropped, giving the linear response to `rhs` alone.
    pub fn solve(&self, rhs: &DVector<f64>, homogeneous: bool) -> Result<DVector<f64>> {
        let nf = self.free.len();
        let mut rf = DVector::from_fn(nf, |r, _| rhs[self.free[r]]);
        if !homogeneous {
            rf -= &self.m_fp_qdd_p;
        }
        let xf = match &self.kind {
            Factor::Chol(c) => c.solve(&rf),
            Factor::Kkt(lu) => {
                let mc = self.l.constraint_count();
                let mut b = DVector::zeros(nf + mc);
                b.rows_mut(0, nf).copy_from(&rf);
                if !homogeneous {
                    b.rows_mut(nf, mc).copy_from(&self.constraint_bias);
                }
                lu.solve(&b).ok_or(GvsError::RedundantConstraints)?.rows(0, nf).into_owned()
            }
        };
        let mut out = if homogeneous {
            DVector::zeros(self.l.dof())
        } else {
            self.prescribed_acc.clone()
        };
        for (k, &i) in self.free.iter().enumerate() {
            out[i] = xf[k];
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(GvsError::SingularMassMatrix);
        }
        Ok(out)
    }
}

/// Everything a controller may read at one state.
pub struct ControlContext<'a> {
    pub linkage: &'a Linkage,
    pub assembly: &'a Assembly,
    /// Accelerations with zero actuation.
    pub drift: DVector<f64>,
    /// Acceleration response per unit actuation (n × n_a).
    pub gain: DMatrix<f64>,
}

pub type Controller<'c> = dyn FnMut(&ControlContext<'_>) -> Result<DVector<f64>> + 'c;

/// Source of actuation inputs during a simulation.
pub enum Input<'c> {
    None,
    Constant(DVector<f64>),
    Schedule(Box<dyn Fn(f64) -> DVector<f64> + 'c>),
    Feedback(Box<Controller<'c>>),
}

/// Generalized accelerations at `(t, q, q̇)` under actuation `u`.
pub fn dynamics_rhs(
    l: &Linkage,
    t: f64,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let asm = Assembly::new(l, t, q, qd, 1.0)?;
    let solver = AccelerationSolver::new(l, &asm)?;
    solver.solve(&asm.net_force(u), false)
}

/// Accelerations and the actuation used, evaluating feedback if present.
pub fn evaluate(
    l: &Linkage,
    t: f64,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    input: &mut Input<'_>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let asm = Assembly::new(l, t, q, qd, 1.0)?;
    let solver = AccelerationSolver::new(l, &asm)?;
    let u = match input {
        Input::None => DVector::zeros(l.actuator_count()),
        Input::Constant(u) => u.clone(),
        Input::Schedule(f) => f(t),
        Input::Feedback(ctrl) => {
            let drift = solver.solve(&asm.net_force(&DVector::zeros(0)), false)?;
            let na = l.actuator_count();
            let mut gain = DMatrix::zeros(l.dof(), na);
            for j in 0..na {
                gain.set_column(j, &solver.solve(&asm.actuation.column(j).into_owned(), true)?);
            }
            let ctx = ControlContext {
                linkage: l,
                assembly: &asm,
                drift: drift.clone(),
                gain,
            };
            let u = ctrl(&ctx)?;
            let qdd = drift + &ctx.gain * &u;
            return Ok((qdd, u));
        }
    };
    let qdd = solver.solve(&asm.net_force(&u), false)?;
    Ok((qdd, u))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Integrator {
    /// Classical fourth-order Runge–Kutta with a fixed step.
    Rk4 { dt: f64 },
    /// Embedded Dormand–Prince 5(4) with PI step control.
    Adaptive { rtol: f64, atol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicOptions {
    pub t_end: f64,
    pub integrator: Integrator,
    /// Output sample period.
    pub sample: f64,
    /// Re-center spherical and free joint charts when their angle passes π.
    pub recenter: bool,
    /// Upper bound on adaptive steps.
    pub max_step: f64,
}

impl Default for DynamicOptions {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            integrator: Integrator::Adaptive {
                rtol: 1e-6,
                atol: 1e-9,
            },
            sample: 0.01,
            recenter: true,
            max_step: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    /// Full internal coordinates per sample.
    pub q: Vec<DVector<f64>>,
    pub qd: Vec<DVector<f64>>,
    /// Actuation per sample.
    pub u: Vec<DVector<f64>>,
    pub steps: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// State vector `y = (q_f, q̇_f)` over the free coordinates.
struct System<'a, 'c> {
    l: &'a Linkage,
    input: Input<'c>,
    evaluations: usize,
}

impl System<'_, '_> {
    fn full(&self, t: f64, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.l.dof();
        let nf = self.l.free.len();
        let mut q = DVector::zeros(n);
        let mut qd = DVector::zeros(n);
        for (i, [v, dv, _]) in self.l.prescribed_state(t, 1.0) {
            q[i] = v;
            qd[i] = dv;
        }
        for (k, &i) in self.l.free.iter().enumerate() {
            q[i] = y[k];
            qd[i] = y[nf + k];
        }
        (q, qd)
    }

    fn deriv(&mut self, t: f64, y: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.evaluations += 1;
        let (q, qd) = self.full(t, y);
        let (qdd, u) = evaluate(self.l, t, &q, &qd, &mut self.input)?;
        let nf = self.l.free.len();
        let mut dy = DVector::zeros(2 * nf);
        for (k, &i) in self.l.free.iter().enumerate() {
            dy[k] = qd[i];
            dy[nf + k] = qdd[i];
        }
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(GvsError::NonFiniteState);
        }
        Ok((dy, u))
    }
}

/// Re-express rotation exponential coordinates with angle above π on the
/// equivalent chart of angle `2π − θ`, mapping velocities to match.
pub fn recenter_charts(l: &Linkage, q: &mut DVector<f64>, qd: &mut DVector<f64>) -> bool {
    let mut changed = false;
    for (i0, kind) in l.rotation_charts() {
        let w = Vector3::new(q[i0], q[i0 + 1], q[i0 + 2]);
        let theta = w.norm();
        if theta <= std::f64::consts::PI {
            continue;
        }
        changed = true;
        let w2 = w * ((theta - 2.0 * std::f64::consts::PI) / theta);
        match kind {
            JointKind::Spherical => {
                let t_old = tangent_exp(&Twist::new(w.x, w.y, w.z, 0.0, 0.0, 0.0));
                let t_new = tangent_exp(&Twist::new(w2.x, w2.y, w2.z, 0.0, 0.0, 0.0));
                let a: Matrix3<f64> = t_old.fixed_view::<3, 3>(0, 0).into_owned();
                let b: Matrix3<f64> = t_new.fixed_view::<3, 3>(0, 0).into_owned();
                let wd = Vector3::new(qd[i0], qd[i0 + 1], qd[i0 + 2]);
                let wd2 = b.try_inverse().expect("tangent invertible below π") * (a * wd);
                for k in 0..3 {
                    q[i0 + k] = w2[k];
                    qd[i0 + k] = wd2[k];
                }
            }
            JointKind::Free => {
                let old = Twist::from_fn(|r, _| q[i0 + r]);
                let r = exp_se3(&old).translation;
                // Translation of exp((w', v)) is V(w') v; recover V column-wise.
                let v_mat = Matrix3::from_fn(|row, col| {
                    let mut e = Twist::zeros();
                    e.fixed_rows_mut::<3>(0).copy_from(&w2);
                    e[3 + col] = 1.0;
                    exp_se3(&e).translation[row]
                });
                let v2 = v_mat.try_inverse().expect("V invertible below 2π") * r;
                let new = Twist::new(w2.x, w2.y, w2.z, v2.x, v2.y, v2.z);
                let eta = tangent_exp(&old) * Twist::from_fn(|r, _| qd[i0 + r]);
                let qd2 = tangent_exp(&new).try_inverse().expect("tangent invertible below π") * eta;
                for k in 0..6 {
                    q[i0 + k] = new[k];
                    qd[i0 + k] = qd2[k];
                }
            }
            _ => {}
        }
    }
    changed
}

fn recenter_state(sys: &System<'_, '_>, t: f64, y: &mut DVector<f64>) -> bool {
    let (mut q, mut qd) = sys.full(t, y);
    if !recenter_charts(sys.l, &mut q, &mut qd) {
        return false;
    }
    let nf = sys.l.free.len();
    for (k, &i) in sys.l.free.iter().enumerate() {
        y[k] = q[i];
        y[nf + k] = qd[i];
    }
    true
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate from `(q₀, q̇₀)` (full internal coordinates; prescribed entries
/// are overwritten by their profiles) over `[0, t_end]`.
pub fn simulate(
    l: &Linkage,
    q0: &DVector<f64>,
    qd0: &DVector<f64>,
    input: Input<'_>,
    opts: &DynamicOptions,
) -> Result<Trajectory> {
    let n = l.dof();
    for v in [q0, qd0] {
        if v.len() != n {
            return Err(GvsError::Dimension {
                expected: n,
                got: v.len(),
            });
        }
    }
    if !(opts.t_end > 0.0 && opts.sample > 0.0) {
        return Err(GvsError::InvalidModel("t_end and sample period must be positive".into()));
    }
    let nf = l.free.len();
    let mut sys = System {
        l,
        input,
        evaluations: 0,
    };
    let mut y = DVector::zeros(2 * nf);
    for (k, &i) in l.free.iter().enumerate() {
        y[k] = q0[i];
        y[nf + k] = qd0[i];
    }
    let mut traj = Trajectory::default();
    let mut t = 0.0;
    if opts.recenter {
        recenter_state(&sys, t, &mut y);
    }
    let record = |sys: &mut System<'_, '_>, traj: &mut Trajectory, t: f64, y: &DVector<f64>| -> Result<()> {
        let (q, qd) = sys.full(t, y);
        let (_, u) = sys.deriv(t, y)?;
        traj.t.push(t);
        traj.q.push(q);
        traj.qd.push(qd);
        traj.u.push(u);
        Ok(())
    };
    let fail = |sys: &System<'_, '_>, t: f64, y: &DVector<f64>, e: GvsError| -> GvsError {
        match e {
            GvsError::NonFiniteState | GvsError::SingularMassMatrix => {
                let (q, qd) = sys.full(t, y);
                GvsError::NonFiniteTrajectory {
                    t,
                    last_q: q,
                    last_qd: qd,
                }
            }
            other => other,
        }
    };
    record(&mut sys, &mut traj, t, &y).map_err(|e| fail(&sys, t, &y, e))?;
    let samples = (opts.t_end / opts.sample - 1e-9).ceil() as usize;
    let sample_time = |k: usize| (k as f64 * opts.sample).min(opts.t_end);

    match opts.integrator {
        Integrator::Rk4 { dt } => {
            if !(dt > 0.0) {
                return Err(GvsError::InvalidModel("time step must be positive".into()));
            }
            for k in 1..=samples {
                let target = sample_time(k);
                while t < target - 1e-12 * target.max(1.0) {
                    let h = dt.min(target - t);
                    let step = |sys: &mut System<'_, '_>| -> Result<DVector<f64>> {
                        let (k1, _) = sys.deriv(t, &y)?;
                        let (k2, _) = sys.deriv(t + 0.5 * h, &(&y + &k1 * (0.5 * h)))?;
                        let (k3, _) = sys.deriv(t + 0.5 * h, &(&y + &k2 * (0.5 * h)))?;
                        let (k4, _) = sys.deriv(t + h, &(&y + &k3 * h))?;
                        Ok(&y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
                    };
                    let yn = step(&mut sys).map_err(|e| fail(&sys, t, &y, e))?;
                    y = yn;
                    t += h;
                    traj.steps += 1;
                    if opts.recenter {
                        recenter_state(&sys, t, &mut y);
                    }
                }
                t = target;
                record(&mut sys, &mut traj, t, &y).map_err(|e| fail(&sys, t, &y, e))?;
            }
        }
        Integrator::Adaptive { rtol, atol } => {
            if !(rtol > 0.0 && atol > 0.0) {
                return Err(GvsError::InvalidModel("tolerances must be positive".into()));
            }
            let (mut f0, _) = sys.deriv(t, &y).map_err(|e| fail(&sys, t, &y, e))?;
            let mut h = initial_step(&y, &f0, rtol, atol).min(opts.sample).min(opts.max_step);
            let mut err_prev: f64 = 1.0;
            for k in 1..=samples {
                let target = sample_time(k);
                while t < target - 1e-12 * target.max(1.0) {
                    if h < 1e-12 {
                        return Err(GvsError::IntegrationStalled { t });
                    }
                    let last = h >= target - t;
                    let hs = if last { target - t } else { h };
                    let mut ks: Vec<DVector<f64>> = Vec::with_capacity(7);
                    ks.push(f0.clone());
                    let mut ok = true;
                    for s in 1..7 {
                        let mut ys = y.clone();
                        for (j, kj) in ks.iter().enumerate() {
                            if A[s][j] != 0.0 {
                                ys.axpy(hs * A[s][j], kj, 1.0);
                            }
                        }
                        match sys.deriv(t + C[s] * hs, &ys) {
                            Ok((k, _)) => ks.push(k),
                            Err(GvsError::NonFiniteState) | Err(GvsError::LogBranchSingularity) => {
                                ok = false;
                                break;
                            }
                            Err(e) => return Err(fail(&sys, t, &y, e)),
                        }
                    }
                    if !ok {
                        traj.rejected += 1;
                        h = hs * 0.25;
                        continue;
                    }
                    let mut y5 = y.clone();
                    let mut y4 = y.clone();
                    for j in 0..7 {
                        if B5[j] != 0.0 {
                            y5.axpy(hs * B5[j], &ks[j], 1.0);
                        }
                        if B4[j] != 0.0 {
                            y4.axpy(hs * B4[j], &ks[j], 1.0);
                        }
                    }
                    let mut acc = 0.0;
                    for i in 0..y.len() {
                        let sc = atol + rtol * y[i].abs().max(y5[i].abs());
                        let e = (y5[i] - y4[i]) / sc;
                        acc += e * e;
                    }
                    let err = (acc / y.len().max(1) as f64).sqrt();
                    if err.is_nan() {
                        traj.rejected += 1;
                        h = hs * 0.25;
                        continue;
                    }
                    if err <= 1.0 {
                        t = if last { target } else { t + hs };
                        y = y5;
                        f0 = ks.pop().unwrap();
                        traj.steps += 1;
                        if opts.recenter && recenter_state(&sys, t, &mut y) {
                            f0 = sys.deriv(t, &y).map_err(|e| fail(&sys, t, &y, e))?.0;
                        }
                        let fac = 0.9 * err.max(1e-10).powf(-0.17) * err_prev.powf(0.04);
                        let hn = hs * fac.clamp(0.2, 5.0);
                        // Keep the controller's step when only clipped to a sample.
                        h = if last { h.max(hn) } else { hn };
                        h = h.min(opts.max_step);
                        err_prev = err.max(1e-4);
                    } else {
                        traj.rejected += 1;
                        h = hs * (0.9 * err.powf(-0.2)).max(0.2);
                    }
                }
                record(&mut sys, &mut traj, t, &y).map_err(|e| fail(&sys, t, &y, e))?;
            }
        }
    }
    traj.evaluations = sys.evaluations;
    Ok(traj)
}

fn initial_step(y: &DVector<f64>, f: &DVector<f64>, rtol: f64, atol: f64) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..y.len() {
        let sc = atol + rtol * y[i].abs();
        d0 += (y[i] / sc).powi(2);
        d1 += (f[i] / sc).powi(2);
    }
    let n = y.len().max(1) as f64;
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        (0.01 * d0 / d1).min(0.1)
    }
}

/// Velocity twist kinematics at a trajectory sample.
pub fn sample_kinematics(l: &Linkage, traj: &Trajectory, k: usize) -> Result<KinematicsCache> {
    KinematicsCache::new(l, &traj.q[k], &traj.qd[k], false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::{Joint, JointControl};
    use crate::linkage::{LinkageBuilder, RigidBody};
    use crate::profile::Profile;
    use nalgebra::{Matrix6, Vector6};

    fn pendulum(m: f64, len: f64) -> Linkage {
        let mut b = LinkageBuilder::new();
        let mut body = RigidBody::massless(len);
        body.inertia =
            Matrix6::from_diagonal(&Vector6::new(0.0, m * len * len / 12.0, m * len * len / 12.0, m, m, m));
        b.add_rigid_link("rod", None, Joint::revolute(Vector3::y()), body).unwrap();
        b.gravity(Vector3::new(0.0, 0.0, -9.81));
        b.finalize().unwrap()
    }

    #[test]
    fn horizontal_pendulum_acceleration() {
        let l = pendulum(1.3, 0.8);
        let qdd = dynamics_rhs(&l, 0.0, &DVector::zeros(1), &DVector::zeros(1), &DVector::zeros(0)).unwrap();
        assert!((qdd[0] - 1.5 * 9.81 / 0.8).abs() < 1e-12);
    }

    #[test]
    fn hanging_pendulum_rests() {
        let l = pendulum(1.0, 1.0);
        let q = DVector::from_element(1, std::f64::consts::FRAC_PI_2);
        let qdd = dynamics_rhs(&l, 0.0, &q, &DVector::zeros(1), &DVector::zeros(0)).unwrap();
        assert!(qdd[0].abs() < 1e-14);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let l = pendulum(1.0, 1.0);
        let run = |dt| {
            let opts = DynamicOptions {
                t_end: 1.0,
                integrator: Integrator::Rk4 { dt },
                sample: 1.0,
                ..Default::default()
            };
            simulate(&l, &DVector::zeros(1), &DVector::zeros(1), Input::None, &opts).unwrap().q[1][0]
        };
        let reference = run(1e-4);
        let e1 = (run(0.04) - reference).abs();
        let e2 = (run(0.02) - reference).abs();
        assert!(e1 / e2 > 12.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn adaptive_matches_rk4() {
        let l = pendulum(1.0, 1.0);
        let base = DynamicOptions {
            t_end: 2.0,
            sample: 0.5,
            ..Default::default()
        };
        let a = simulate(
            &l,
            &DVector::zeros(1),
            &DVector::zeros(1),
            Input::None,
            &DynamicOptions {
                integrator: Integrator::Adaptive {
                    rtol: 1e-10,
                    atol: 1e-12,
                },
                ..base.clone()
            },
        )
        .unwrap();
        let r = simulate(
            &l,
            &DVector::zeros(1),
            &DVector::zeros(1),
            Input::None,
            &DynamicOptions {
                integrator: Integrator::Rk4 { dt: 1e-3 },
                ..base
            },
        )
        .unwrap();
        assert_eq!(a.len(), 5);
        for k in 0..5 {
            assert!((a.q[k][0] - r.q[k][0]).abs() < 1e-8);
        }
    }

    #[test]
    fn prescribed_joint_follows_profile() {
        let mut b = LinkageBuilder::new();
        let slide = b
            .add_rigid_link(
                "slide",
                None,
                Joint::prismatic(Vector3::x())
                    .with_control(JointControl::Coordinate(vec![(0.5, Profile::Linear { rate: 1.0 })])),
                RigidBody::massless(0.1),
            )
            .unwrap();
        let mut body = RigidBody::massless(1.0);
        body.inertia = Matrix6::from_diagonal(&Vector6::new(0.1, 0.1, 0.1, 1.0, 1.0, 1.0));
        b.add_rigid_link("arm", Some(slide), Joint::revolute(Vector3::z()), body).unwrap();
        let l = b.finalize().unwrap();
        assert_eq!(l.free_coordinates(), &[1]);
        let opts = DynamicOptions {
            t_end: 1.0,
            sample: 0.5,
            integrator: Integrator::Rk4 { dt: 0.01 },
            ..Default::default()
        };
        let tr = simulate(&l, &DVector::zeros(2), &DVector::zeros(2), Input::None, &opts).unwrap();
        assert!((tr.q[2][0] - 0.5).abs() < 1e-15);
        assert!((tr.qd[2][0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spherical_chart_recentering_preserves_rotation() {
        let mut b = LinkageBuilder::new();
        b.add_rigid_link("ball", None, Joint::spherical(), RigidBody::massless(1.0)).unwrap();
        let l = b.finalize().unwrap();
        let mut q = DVector::from_vec(vec![2.0, -2.5, 1.0]);
        let mut qd = DVector::from_vec(vec![0.3, 0.1, -0.2]);
        let k0 = KinematicsCache::new(&l, &q, &qd, false).unwrap();
        assert!(recenter_charts(&l, &mut q, &mut qd));
        let k1 = KinematicsCache::new(&l, &q, &qd, false).unwrap();
        let p = l.tip_point(0);
        assert!((k0.poses[p].rotation - k1.poses[p].rotation).norm() < 1e-12);
        assert!((k0.velocities[p] - k1.velocities[p]).norm() < 1e-12);
    }

    #[test]
    fn free_chart_recentering_preserves_pose() {
        let mut b = LinkageBuilder::new();
        b.add_rigid_link("body", None, Joint::free(), RigidBody::massless(1.0)).unwrap();
        let l = b.finalize().unwrap();
        let mut q = DVector::from_vec(vec![0.5, 3.0, -1.0, 0.3, -0.4, 1.2]);
        let mut qd = DVector::from_vec(vec![0.3, 0.1, -0.2, 1.0, 0.5, -0.7]);
        let k0 = KinematicsCache::new(&l, &q, &qd, false).unwrap();
        assert!(recenter_charts(&l, &mut q, &mut qd));
        let k1 = KinematicsCache::new(&l, &q, &qd, false).unwrap();
        let p = l.tip_point(0);
        assert!((k0.poses[p].translation - k1.poses[p].translation).norm() < 1e-12);
        assert!((k0.poses[p].rotation - k1.poses[p].rotation).norm() < 1e-12);
        assert!((k0.velocities[p] - k1.velocities[p]).norm() < 1e-12);
    }
}
