//! Seeded Lie-kernel error measures over randomized inputs.

use gvs_core::se3::{ad, adjoint, dexp, exp_se3, hat, log_se3, magnus4, MAGNUS_NODES};
use gvs_core::{Pose, Twist};
use nalgebra::{Matrix4, Matrix6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SAMPLES: usize = 1000;

pub fn random_twist(rng: &mut ChaCha8Rng, max_angle: f64, max_linear: f64) -> Twist {
    let mut w = Twist::zeros();
    loop {
        for i in 0..3 {
            w[i] = rng.random_range(-1.0..1.0);
        }
        let n = w.fixed_rows::<3>(0).norm();
        if n > 1e-3 && n <= 1.0 {
            break;
        }
    }
    let scale = rng.random_range(0.0..max_angle);
    for i in 0..3 {
        w[i] *= scale;
        w[i + 3] = rng.random_range(-max_linear..max_linear);
    }
    w
}

pub fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    (a.to_matrix() - b.to_matrix()).abs().max()
}

/// Worst `log(exp ξ)` and `exp(log g)` round-trip error.
pub fn exp_log_round_trip() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..SAMPLES {
        let xi = random_twist(&mut rng, 3.1, 2.0);
        let back = log_se3(&exp_se3(&xi)).unwrap();
        worst = worst.max((back - xi).norm() / xi.norm().max(1.0));
        let g = exp_se3(&random_twist(&mut rng, 3.1, 2.0));
        let again = exp_se3(&log_se3(&g).unwrap());
        worst = worst.max(pose_distance(&g, &again));
    }
    worst
}

/// Worst relative round-trip error for twists scaled from 1 down to 1e-11.
pub fn small_angle_round_trip() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for k in 0..SAMPLES {
        let scale = 10f64.powi(-((k % 12) as i32));
        let xi = random_twist(&mut rng, 1.0, 1.0) * scale;
        let back = log_se3(&exp_se3(&xi)).unwrap();
        worst = worst.max((back - xi).norm() / xi.norm().max(1e-300));
    }
    worst
}

/// Worst entry of `Ad(exp ξ) − exp(ad ξ)`.
pub fn adjoint_exp_mismatch() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..SAMPLES {
        let xi = random_twist(&mut rng, 3.0, 2.0);
        let lhs = adjoint(&exp_se3(&xi));
        let rhs: Matrix6<f64> = ad(&xi).exp();
        worst = worst.max((lhs - rhs).abs().max());
    }
    worst
}

/// Worst entry of `exp(ξ) − expm(ξ̂)`.
pub fn exp_matrix_mismatch() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = 0.0;
    for _ in 0..SAMPLES {
        let xi = random_twist(&mut rng, 3.0, 2.0);
        let m: Matrix4<f64> = hat(&xi).exp();
        worst = worst.max((exp_se3(&xi).to_matrix() - m).abs().max());
    }
    worst
}

/// Integrate `g' = g ξ̂(X)` on `[0, 1]` with `n` two-node Magnus steps.
pub fn magnus_path(field: &dyn Fn(f64) -> Twist, n: usize) -> Pose {
    let h = 1.0 / n as f64;
    let mut g = Pose::identity();
    for k in 0..n {
        let x0 = k as f64 * h;
        let a = field(x0 + MAGNUS_NODES[0] * h);
        let b = field(x0 + MAGNUS_NODES[1] * h);
        g = g.compose(&exp_se3(&magnus4(&a, &b, h).unwrap()));
    }
    g
}

/// Smallest error ratio between 8 and 16 Magnus steps against a 512-step reference.
pub fn magnus_halving_ratio() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst = f64::INFINITY;
    for _ in 0..SAMPLES {
        let c: Vec<Twist> = (0..4).map(|_| random_twist(&mut rng, 2.0, 1.0)).collect();
        let field = |x: f64| c[0] + c[1] * x + c[2] * (x * x) + c[3] * (3.0 * x).sin();
        let reference = magnus_path(&field, 512);
        let coarse = pose_distance(&magnus_path(&field, 8), &reference);
        let fine = pose_distance(&magnus_path(&field, 16), &reference);
        worst = worst.min(coarse / fine);
    }
    worst
}

/// Worst relative error of `dexp` against central differences of `log(exp(Ω)⁻¹ exp(Ω ± hδ))`.
pub fn dexp_mismatch() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..SAMPLES {
        let omega = random_twist(&mut rng, 2.8, 1.0);
        let delta = random_twist(&mut rng, 1.0, 1.0);
        let g_inv = exp_se3(&omega).inverse();
        let plus = log_se3(&g_inv.compose(&exp_se3(&(omega + delta * h)))).unwrap();
        let minus = log_se3(&g_inv.compose(&exp_se3(&(omega - delta * h)))).unwrap();
        let fd = (plus - minus) / (2.0 * h);
        let exact = dexp(&omega).unwrap() * delta;
        worst = worst.max((fd - exact).norm() / exact.norm().max(1.0));
    }
    worst
}
