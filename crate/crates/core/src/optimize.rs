//! Cable placement objective and a bounded generalized pattern search.

use nalgebra::{DVector, Vector3};
use rayon::prelude::*;

use crate::error::{GvsError, Result};
use crate::kinematics::forward_kinematics;
use crate::linkage::{Actuator, Cable, Linkage};
use crate::statics::{static_equilibrium, StaticOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSearchOptions {
    /// Initial mesh size.
    pub mesh: f64,
    /// Stop once the mesh falls below this size.
    pub tol: f64,
    pub max_evaluations: usize,
    /// Per-coordinate step scale (defaults to one).
    pub scales: Option<Vec<f64>>,
}

impl Default for PatternSearchOptions {
    fn default() -> Self {
        Self {
            mesh: 1.0,
            tol: 1e-6,
            max_evaluations: 10_000,
            scales: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSearchResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub iterations: usize,
    /// Whether the mesh tolerance was reached (as opposed to the budget).
    pub converged: bool,
}

/// Minimize `f` over the box `[lower, upper]` by coordinate polling `±e_i`
/// around the incumbent and, after a success, also around the pattern point
/// `x + (x − x_prev)`. Each poll is evaluated in parallel and the best point
/// wins, ties going to the lowest poll index. The mesh halves when a poll
/// fails and doubles when the pattern point itself succeeds.
pub fn pattern_search<F>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &PatternSearchOptions,
) -> Result<PatternSearchResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(GvsError::Dimension {
            expected: n,
            got: lower.len().min(upper.len()),
        });
    }
    if (0..n).any(|i| !(lower[i] <= upper[i])) || !(opts.mesh > 0.0 && opts.tol > 0.0) {
        return Err(GvsError::InvalidModel("inconsistent pattern search bounds".into()));
    }
    let scales = opts.scales.clone().unwrap_or_else(|| vec![1.0; n]);
    if scales.len() != n {
        return Err(GvsError::Dimension {
            expected: n,
            got: scales.len(),
        });
    }
    let clamp = |x: &mut Vec<f64>| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut x = x0.to_vec();
    clamp(&mut x);
    let mut fx = f(&x);
    let mut evaluations = 1;
    let mut iterations = 0;
    let mut mesh = opts.mesh;
    let mut pattern: Option<Vec<f64>> = None;
    while mesh >= opts.tol && evaluations < opts.max_evaluations {
        iterations += 1;
        let mut centers = Vec::with_capacity(2);
        if let Some(p) = &pattern {
            let mut c: Vec<f64> = x.iter().zip(p).map(|(a, b)| a + b).collect();
            clamp(&mut c);
            centers.push(c);
        }
        centers.push(x.clone());
        let mut polls: Vec<Vec<f64>> = Vec::with_capacity(centers.len() * (2 * n + 1));
        for (k, c0) in centers.iter().enumerate() {
            if k + 1 < centers.len() {
                polls.push(c0.clone());
            }
            for i in 0..n {
                for s in [1.0, -1.0] {
                    let mut c = c0.clone();
                    c[i] += s * mesh * scales[i];
                    clamp(&mut c);
                    polls.push(c);
                }
            }
        }
        let pattern_point = pattern.is_some() && polls[0] != x;
        polls.retain(|c| c != &x);
        let budget = opts.max_evaluations - evaluations;
        polls.truncate(budget);
        if polls.is_empty() {
            mesh *= 0.5;
            pattern = None;
            continue;
        }
        let values: Vec<f64> = polls.par_iter().map(|c| f(c)).collect();
        evaluations += polls.len();
        let mut best = None;
        for (k, v) in values.iter().enumerate() {
            if v.is_finite() && *v < fx && best.is_none_or(|b: usize| *v < values[b]) {
                best = Some(k);
            }
        }
        match best {
            Some(k) => {
                if pattern_point && k == 0 {
                    mesh *= 2.0;
                }
                pattern = Some(polls[k].iter().zip(&x).map(|(a, b)| a - b).collect());
                x = polls.swap_remove(k);
                fx = values[k];
            }
            None => {
                pattern = None;
                mesh *= 0.5;
            }
        }
    }
    Ok(PatternSearchResult {
        x,
        f: fx,
        evaluations,
        iterations,
        converged: mesh < opts.tol,
    })
}

/// Cable path and tension design for a single cable-actuated linkage.
///
/// The design vector is `[y₀, y₁, y₂, z₀, z₁, z₂, T]`: ascending polynomial
/// coefficients of the cable offsets followed by the tension.
pub struct PlacementProblem<'a> {
    pub linkage: &'a Linkage,
    /// Actuator index of the designed cable.
    pub actuator: usize,
    pub mid_point: usize,
    pub end_point: usize,
    pub mid_target: Vector3<f64>,
    pub end_target: Vector3<f64>,
    pub statics: StaticOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementEvaluation {
    pub objective: f64,
    pub mid: Vector3<f64>,
    pub end: Vector3<f64>,
    pub q: DVector<f64>,
}

pub const PLACEMENT_PENALTY: f64 = 1e6;

impl PlacementProblem<'_> {
    fn template(&self) -> Result<&Cable> {
        match self.linkage.actuators().get(self.actuator) {
            Some(Actuator::Cable(c)) => Ok(c),
            _ => Err(GvsError::InvalidModel(format!("actuator {} is not a cable", self.actuator))),
        }
    }

    /// Static equilibrium and endpoint errors for one design.
    pub fn evaluate(&self, x: &[f64]) -> Result<PlacementEvaluation> {
        if x.len() != 7 {
            return Err(GvsError::Dimension { expected: 7, got: x.len() });
        }
        let mut cable = self.template()?.clone();
        cable.y = x[0..3].to_vec();
        cable.z = x[3..6].to_vec();
        let l = self.linkage.with_cable(self.actuator, cable)?;
        let mut u = DVector::zeros(l.actuator_count());
        u[self.actuator] = x[6];
        let s = static_equilibrium(&l, &u, &DVector::zeros(l.dof()), &self.statics)?;
        let poses = forward_kinematics(&l, &s.q)?;
        let mid = poses[self.mid_point].translation;
        let end = poses[self.end_point].translation;
        Ok(PlacementEvaluation {
            objective: (self.mid_target - mid).norm() + (self.end_target - end).norm(),
            mid,
            end,
            q: s.q,
        })
    }

    /// Objective value, with failed solves mapped to a large penalty.
    pub fn objective(&self, x: &[f64]) -> f64 {
        match self.evaluate(x) {
            Ok(e) => e.objective,
            Err(GvsError::NoConvergence { residual, .. }) => PLACEMENT_PENALTY + residual,
            Err(_) => PLACEMENT_PENALTY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convex_bowl() {
        let a = [0.3, -1.7, 2.2];
        let r = pattern_search(
            |x| x.iter().zip(&a).map(|(x, a)| (x - a).powi(2)).sum(),
            &[0.0; 3],
            &[-5.0; 3],
            &[5.0; 3],
            &PatternSearchOptions {
                tol: 1e-8,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.converged);
        for (x, a) in r.x.iter().zip(&a) {
            assert!((x - a).abs() < 1e-7);
        }
    }

    #[test]
    fn rosenbrock() {
        let r = pattern_search(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            &PatternSearchOptions {
                mesh: 0.5,
                tol: 1e-9,
                max_evaluations: 5000,
                scales: None,
            },
        )
        .unwrap();
        assert!(r.f < 1e-4, "f = {} after {} evaluations", r.f, r.evaluations);
        assert!(r.evaluations <= 5000);
    }

    #[test]
    fn active_lower_bound_is_exact() {
        let r = pattern_search(|x| x[0], &[1.7], &[1.0], &[2.0], &Default::default()).unwrap();
        assert_eq!(r.x[0], 1.0);
    }

    #[test]
    fn never_leaves_the_box() {
        let lo = [-1.0, 0.5];
        let hi = [0.25, 3.0];
        let r = pattern_search(
            |x| {
                assert!(x[0] >= lo[0] && x[0] <= hi[0] && x[1] >= lo[1] && x[1] <= hi[1]);
                (x[0] - 3.0).powi(2) + (x[1] + 4.0).powi(2)
            },
            &[0.0, 1.0],
            &lo,
            &hi,
            &Default::default(),
        )
        .unwrap();
        assert_eq!(r.x, vec![0.25, 0.5]);
    }
}
