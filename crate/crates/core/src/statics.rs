//! Static equilibrium `K q = B(q) u + F(q, 0)` by damped Newton iteration with
//! finite-difference Jacobians, optional loop closures and load continuation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::{actuation_matrix, generalized_external_force};
use crate::constraints::closure_jacobian;
use crate::error::{GvsError, Result};
use crate::kinematics::KinematicsCache;
use crate::linkage::Linkage;

#[derive(Debug, Clone, PartialEq)]
pub struct StaticOptions {
    /// Relative residual tolerance.
    pub tol: f64,
    pub max_iterations: usize,
    /// Relative finite-difference step.
    pub fd_step: f64,
    /// Number of load-continuation steps.
    pub steps: usize,
    /// Time at which load profiles and prescribed coordinates are evaluated.
    pub time: f64,
}

impl Default for StaticOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iterations: 100,
            fd_step: 1e-6,
            steps: 1,
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StaticSolution {
    /// Load factor of this solution.
    pub factor: f64,
    /// Full internal coordinate vector.
    pub q: DVector<f64>,
    /// Closure multipliers.
    pub lambda: DVector<f64>,
    /// Final scaled residual (∞-norm of the force residual over its scale).
    pub residual: f64,
    /// Largest closure residual.
    pub closure_residual: f64,
    pub iterations: usize,
}

struct Problem<'a> {
    l: &'a Linkage,
    u: &'a DVector<f64>,
    factor: f64,
    time: f64,
    base: DVector<f64>,
}

struct Eval {
    /// Stacked residual `[R + Aᵀλ; Φ_c]` on free coordinates.
    f: DVector<f64>,
    /// Scale of the force residual.
    scale: f64,
    force_norm: f64,
    closure_norm: f64,
    closures: usize,
}

impl Problem<'_> {
    fn full_q(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut q = self.base.clone();
        for (k, &i) in self.l.free.iter().enumerate() {
            q[i] = z[k];
        }
        q
    }

    fn eval(&self, z: &DVector<f64>) -> Result<Eval> {
        let l = self.l;
        let nf = l.free.len();
        let q = self.full_q(z);
        let kin = KinematicsCache::at_rest(l, &q)?;
        let kq = &l.k * &q;
        let mut ext = generalized_external_force(l, &kin, self.time, self.factor)?;
        if !self.u.is_empty() {
            let b = actuation_matrix(l, &kin)?;
            ext.gemv(self.factor, &b, self.u, 1.0);
        }
        let mut r = &kq - &ext;
        let mc = l.constraint_count();
        let mut phi = DVector::zeros(0);
        if mc > 0 {
            let (p, a) = closure_jacobian(l, &kin)?;
            r.gemv_tr(1.0, &a, &z.rows(nf, mc), 1.0);
            phi = p;
        }
        let mut f = DVector::zeros(nf + mc);
        for (k, &i) in l.free.iter().enumerate() {
            f[k] = r[i];
        }
        f.rows_mut(nf, mc).copy_from(&phi);
        let free_max = |v: &DVector<f64>| l.free.iter().map(|&i| v[i].abs()).fold(0.0, f64::max);
        let scale = 1.0 + free_max(&kq) + free_max(&ext);
        Ok(Eval {
            force_norm: f.rows(0, nf).amax(),
            closure_norm: phi.amax(),
            closures: mc,
            f,
            scale,
        })
    }

    fn jacobian(&self, z: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
        let nf = self.l.free.len();
        let m = z.len();
        let cols: Vec<Result<DVector<f64>>> = (0..nf)
            .into_par_iter()
            .map(|i| {
                let h = step * (1.0 + z[i].abs());
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                Ok((self.eval(&zp)?.f - self.eval(&zm)?.f) / (2.0 * h))
            })
            .collect();
        let mut jac = DMatrix::zeros(m, m);
        for (i, c) in cols.into_iter().enumerate() {
            jac.set_column(i, &c?);
        }
        if m > nf {
            // ∂(Aᵀλ)/∂λ = Aᵀ, ∂Φ/∂λ = 0.
            let q = self.full_q(z);
            let kin = KinematicsCache::at_rest(self.l, &q)?;
            let (_, a) = closure_jacobian(self.l, &kin)?;
            for (k, &i) in self.l.free.iter().enumerate() {
                for r in 0..(m - nf) {
                    jac[(k, nf + r)] = a[(r, i)];
                }
            }
        }
        Ok(jac)
    }
}

fn converged(e: &Eval, tol: f64) -> bool {
    e.force_norm <= tol * e.scale && e.closure_norm <= tol
}

fn merit(e: &Eval) -> f64 {
    let nf = e.f.len() - e.closures;
    let fs = e.f.rows(0, nf).norm() / e.scale;
    let fc = e.f.rows(nf, e.closures).norm();
    (fs * fs + fc * fc).sqrt()
}

fn newton(p: &Problem<'_>, z0: DVector<f64>, opts: &StaticOptions) -> Result<(DVector<f64>, Eval, usize)> {
    let mut z = z0;
    let mut e = p.eval(&z)?;
    let has_closures = p.l.constraint_count() > 0;
    for it in 0..opts.max_iterations {
        if converged(&e, opts.tol) {
            return Ok((z, e, it));
        }
        let jac = p.jacobian(&z, opts.fd_step)?;
        let rhs = -&e.f;
        let dz = match jac.clone().lu().solve(&rhs) {
            Some(dz) if dz.iter().all(|v| v.is_finite()) => dz,
            _ if has_closures => return Err(GvsError::RedundantConstraints),
            _ => jac
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|_| GvsError::NoConvergence {
                    iterations: it,
                    residual: merit(&e),
                    best: p.full_q(&z),
                })?,
        };
        let m0 = merit(&e);
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1.0 / 1024.0 {
            let zt = &z + &dz * alpha;
            if let Ok(et) = p.eval(&zt) {
                if merit(&et) < m0 {
                    accepted = Some((zt, et));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((zt, et)) => {
                z = zt;
                e = et;
            }
            None => {
                return Err(GvsError::NoConvergence {
                    iterations: it + 1,
                    residual: m0,
                    best: p.full_q(&z),
                })
            }
        }
    }
    if converged(&e, opts.tol) {
        return Ok((z, e, opts.max_iterations));
    }
    Err(GvsError::NoConvergence {
        iterations: opts.max_iterations,
        residual: merit(&e),
        best: p.full_q(&z),
    })
}

/// Solve the sequence of load factors `k/S`, `k = 1..=S`, warm-starting each
/// from the previous solution. Returns one solution per step.
pub fn static_sweep(
    l: &Linkage,
    u: &DVector<f64>,
    q_guess: &DVector<f64>,
    opts: &StaticOptions,
) -> Result<Vec<StaticSolution>> {
    if q_guess.len() != l.dof() {
        return Err(GvsError::Dimension {
            expected: l.dof(),
            got: q_guess.len(),
        });
    }
    if !u.is_empty() && u.len() != l.actuator_count() {
        return Err(GvsError::Dimension {
            expected: l.actuator_count(),
            got: u.len(),
        });
    }
    if q_guess.iter().any(|v| !v.is_finite()) {
        return Err(GvsError::NonFiniteState);
    }
    let steps = opts.steps.max(1);
    let nf = l.free.len();
    let mc = l.constraint_count();
    let mut z = DVector::zeros(nf + mc);
    for (k, &i) in l.free.iter().enumerate() {
        z[k] = q_guess[i];
    }
    let mut out = Vec::with_capacity(steps);
    for k in 1..=steps {
        let factor = k as f64 / steps as f64;
        let mut base = q_guess.clone();
        for (i, [v, _, _]) in l.prescribed_state(opts.time, factor) {
            base[i] = v;
        }
        let p = Problem {
            l,
            u,
            factor,
            time: opts.time,
            base,
        };
        let (zs, e, iterations) = newton(&p, z, opts)?;
        out.push(StaticSolution {
            factor,
            q: p.full_q(&zs),
            lambda: zs.rows(nf, mc).into_owned(),
            residual: e.force_norm / e.scale,
            closure_residual: e.closure_norm,
            iterations,
        });
        z = zs;
    }
    Ok(out)
}

/// Equilibrium at full load (with `opts.steps` continuation steps).
pub fn static_equilibrium(
    l: &Linkage,
    u: &DVector<f64>,
    q_guess: &DVector<f64>,
    opts: &StaticOptions,
) -> Result<StaticSolution> {
    Ok(static_sweep(l, u, q_guess, opts)?.pop().expect("at least one step"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::Joint;
    use crate::linkage::{LinkageBuilder, LoadFrame, SoftDivision};
    use crate::rod::{CrossSection, Material, Mode, StrainBasisSpec};
    use crate::se3::Twist;

    #[test]
    fn unloaded_rod_stays_straight() {
        let mut b = LinkageBuilder::new();
        b.add_soft_link(
            "rod",
            None,
            Joint::fixed(),
            vec![SoftDivision::new(
                1.0,
                CrossSection::circular(0.01),
                Material::new(1e6, 0.5, 1000.0),
                StrainBasisSpec::all_modes(1, 1),
            )],
        )
        .unwrap();
        let l = b.finalize().unwrap();
        let s = static_equilibrium(&l, &DVector::zeros(0), &DVector::zeros(l.dof()), &Default::default())
            .unwrap();
        assert_eq!(s.q.amax(), 0.0);
    }

    #[test]
    fn pure_tip_moment_gives_uniform_curvature() {
        let (len, e, r, mt) = (0.5, 1e6, 0.01, 0.005);
        let mut b = LinkageBuilder::new();
        let rod = b
            .add_soft_link(
                "rod",
                None,
                Joint::fixed(),
                vec![SoftDivision::new(
                    len,
                    CrossSection::circular(r),
                    Material::new(e, 0.5, 0.0),
                    StrainBasisSpec::new().with_mode(Mode::BendY, 3).with_mode(Mode::BendZ, 1),
                )],
            )
            .unwrap();
        b.add_point_load(rod, 1.0, Twist::new(0.0, mt, 0.0, 0.0, 0.0, 0.0), LoadFrame::Follower, Default::default())
            .unwrap();
        let l = b.finalize().unwrap();
        let s = static_equilibrium(&l, &DVector::zeros(0), &DVector::zeros(l.dof()), &Default::default())
            .unwrap();
        let ei = e * std::f64::consts::PI * r.powi(4) / 4.0;
        let qp = l.to_physical(&s.q);
        assert!((qp[0] - mt / ei).abs() < 1e-9 * mt / ei);
        assert!(qp.rows(1, 5).amax() < 1e-9);
    }
}
