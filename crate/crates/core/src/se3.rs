//! SE(3) kernel.
//!
//! Twists are 6-vectors stored angular part first, `(ω, v)`, and are used for
//! strain twists, body velocity twists and (dually) wrenches. All tangent maps
//! follow the body-frame (right) convention: a perturbation `δ` of the
//! exponent `Ω` moves `exp(Ω)` to `exp(Ω) · exp(T(Ω) δ)` to first order.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::{GvsError, Result};

pub type Twist = Vector6<f64>;

/// Below this angle the trigonometric coefficients are summed as power series.
const SERIES_ANGLE: f64 = 0.2;

/// Minimum distance of `trace(R)` from -1 accepted by [`log_se3`].
const LOG_BRANCH_EPS: f64 = 1e-9;

#[inline]
pub fn angular(t: &Twist) -> Vector3<f64> {
    Vector3::new(t[0], t[1], t[2])
}

#[inline]
pub fn linear(t: &Twist) -> Vector3<f64> {
    Vector3::new(t[3], t[4], t[5])
}

#[inline]
pub fn twist(angular: &Vector3<f64>, linear: &Vector3<f64>) -> Twist {
    Twist::new(angular.x, angular.y, angular.z, linear.x, linear.y, linear.z)
}

/// Skew-symmetric matrix of a 3-vector, `hat3(a) b = a × b`.
#[inline]
pub fn hat3(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

#[inline]
pub fn vee3(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// 4×4 matrix representation of a twist in se(3).
pub fn hat(xi: &Twist) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&angular(xi)));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&linear(xi));
    m
}

pub fn vee(m: &Matrix4<f64>) -> Twist {
    let w = vee3(&m.fixed_view::<3, 3>(0, 0).into_owned());
    let v = m.fixed_view::<3, 1>(0, 3).into_owned();
    twist(&w, &v)
}

/// Element of SE(3) stored as rotation and translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Pose from a rotation vector (axis times angle) and a translation.
    pub fn from_rotation_vector(rotvec: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: exp_so3(&rotvec),
            translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Self {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_defect(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    /// Group adjoint `Ad(g)`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        adjoint(self)
    }

    /// `Ad(g)⁻¹ = Ad(g⁻¹)` without forming the inverse pose first.
    pub fn adjoint_inv(&self) -> Matrix6<f64> {
        let rt = self.rotation.transpose();
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&rt);
        m.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-rt * hat3(&self.translation)));
        m
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

// Power series in u = θ² of the exponential coefficients
//   a = sinθ/θ,  b = (1 − cosθ)/θ²,  c = (θ − sinθ)/θ³.
fn exp_coeffs(theta: f64) -> (f64, f64, f64) {
    if theta < SERIES_ANGLE {
        let u = theta * theta;
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        let mut term = 1.0; // (−u)^n
        let mut fact = 1.0; // (2n+1)!
        for n in 0..10 {
            let k = 2 * n + 1;
            if n > 0 {
                fact *= (k - 1) as f64 * k as f64;
            }
            a += term / fact;
            b += term / (fact * (k + 1) as f64);
            c += term / (fact * (k + 1) as f64 * (k + 2) as f64);
            term *= -u;
        }
        (a, b, c)
    } else {
        let (s, co) = theta.sin_cos();
        let t2 = theta * theta;
        (s / theta, (1.0 - co) / t2, (theta - s) / (t2 * theta))
    }
}

pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let (a, b, _) = exp_coeffs(theta);
    let wh = hat3(w);
    Matrix3::identity() + wh * a + wh * wh * b
}

/// Closed-form exponential of a twist.
pub fn exp_se3(omega: &Twist) -> Pose {
    let w = angular(omega);
    let v = linear(omega);
    let theta = w.norm();
    let (a, b, c) = exp_coeffs(theta);
    let wh = hat3(&w);
    let wh2 = wh * wh;
    let rotation = Matrix3::identity() + wh * a + wh2 * b;
    let vmat = Matrix3::identity() + wh * b + wh2 * c;
    Pose {
        rotation,
        translation: vmat * v,
    }
}

/// Principal logarithm of a pose; fails within `1e-9` of a half-turn.
pub fn log_se3(g: &Pose) -> Result<Twist> {
    let r = &g.rotation;
    let tr = r.trace();
    if tr <= -1.0 + LOG_BRANCH_EPS {
        return Err(GvsError::LogBranchSingularity);
    }
    let skew = vee3(&(r - r.transpose())); // 2 sinθ · axis
    let sin_t = 0.5 * skew.norm();
    let cos_t = 0.5 * (tr - 1.0);
    let theta = sin_t.atan2(cos_t);
    let (a, _, _) = exp_coeffs(theta);
    let w = skew * (0.5 / a);
    let wh = hat3(&w);
    let d = if theta < SERIES_ANGLE {
        let u = theta * theta;
        1.0 / 12.0 + u / 720.0 + u * u / 30240.0 + u * u * u / 1_209_600.0
    } else {
        let (s, c) = theta.sin_cos();
        (1.0 - theta * s / (2.0 * (1.0 - c))) / (theta * theta)
    };
    let vinv = Matrix3::identity() - wh * 0.5 + wh * wh * d;
    Ok(twist(&w, &(vinv * g.translation)))
}

/// Group adjoint `[[R, 0], [r̃R, R]]`.
pub fn adjoint(g: &Pose) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&g.rotation);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&g.rotation);
    m.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(hat3(&g.translation) * g.rotation));
    m
}

/// Algebra adjoint `[[ω̃, 0], [ṽ, ω̃]]`; `ad(ξ) η` is the Lie bracket.
pub fn ad(xi: &Twist) -> Matrix6<f64> {
    let wh = hat3(&angular(xi));
    let vh = hat3(&linear(xi));
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&wh);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&wh);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&vh);
    m
}

/// Lie bracket `ad(a) b` without forming the 6×6 matrix.
#[inline]
pub fn bracket(a: &Twist, b: &Twist) -> Twist {
    let (wa, va) = (angular(a), linear(a));
    let (wb, vb) = (angular(b), linear(b));
    twist(&wa.cross(&wb), &(wa.cross(&vb) + va.cross(&wb)))
}

/// Weight of the bracket term in the two-node Magnus step, `√3/12`.
pub const MAGNUS_BRACKET: f64 = 0.144_337_567_297_406_3;

/// Interior nodes of the two-point Gauss rule on `[0, 1]`.
pub const MAGNUS_NODES: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Fourth-order two-node Magnus step for `g' = g ξ̂` over an interval of
/// length `h`, from the field sampled at the interval's Gauss nodes.
pub fn magnus4(xi_a: &Twist, xi_b: &Twist, h: f64) -> Result<Twist> {
    if h <= 0.0 || !h.is_finite() {
        return Err(GvsError::NonpositiveInterval);
    }
    Ok(magnus4_unchecked(xi_a, xi_b, h))
}

#[inline]
pub(crate) fn magnus4_unchecked(xi_a: &Twist, xi_b: &Twist, h: f64) -> Twist {
    (xi_a + xi_b) * (0.5 * h) + bracket(xi_a, xi_b) * (MAGNUS_BRACKET * h * h)
}

/// Coefficients of `T(Ω) = I − c₁ad + c₂ad² − c₃ad³ + c₄ad⁴` and their
/// derivatives with respect to `u = θ²`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TangentCoeffs {
    pub c: [f64; 4],
    pub dc_du: [f64; 4],
}

pub(crate) fn tangent_coeffs(theta: f64) -> TangentCoeffs {
    if theta < SERIES_ANGLE {
        let u = theta * theta;
        let mut c = [0.0; 4];
        let mut dc = [0.0; 4];
        // factorials (2n)! and (2n+1)! for n up to 13
        let mut f2n = 1.0; // (2n)!
        for n in 1..=13usize {
            f2n *= ((2 * n - 1) * (2 * n)) as f64;
            let f2n1 = f2n * (2 * n + 1) as f64;
            let sgn = if n % 2 == 1 { 1.0 } else { -1.0 }; // (−1)^{n+1}
            let nf = n as f64;
            let k1 = sgn * (4.0 - 2.0 * nf) / (2.0 * f2n);
            let k2 = -sgn * (2.0 * nf - 4.0) / (2.0 * f2n1);
            accumulate(&mut c[0], &mut dc[0], k1, n - 1, u);
            accumulate(&mut c[1], &mut dc[1], k2, n - 1, u);
            if n >= 2 {
                let k3 = sgn * (2.0 - 2.0 * nf) / (2.0 * f2n);
                let k4 = -sgn * (2.0 * nf - 2.0) / (2.0 * f2n1);
                accumulate(&mut c[2], &mut dc[2], k3, n - 2, u);
                accumulate(&mut c[3], &mut dc[3], k4, n - 2, u);
            }
        }
        TangentCoeffs { c, dc_du: dc }
    } else {
        let t = theta;
        let (s, co) = t.sin_cos();
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t2 * t2;
        let c = [
            (4.0 - 4.0 * co - t * s) / (2.0 * t2),
            (4.0 * t - 5.0 * s + t * co) / (2.0 * t3),
            (2.0 - 2.0 * co - t * s) / (2.0 * t4),
            (2.0 * t - 3.0 * s + t * co) / (2.0 * t4 * t),
        ];
        let p = 5.0 * t * s - t2 * co - 8.0 + 8.0 * co;
        let r = 15.0 * s - 8.0 * t - 7.0 * t * co - t2 * s;
        // dc/du = (dc/dθ) / (2θ)
        let dc_dtheta = [p / (2.0 * t3), r / (2.0 * t4), p / (2.0 * t4 * t), r / (2.0 * t4 * t2)];
        let dc_du = dc_dtheta.map(|x| x / (2.0 * t));
        TangentCoeffs { c, dc_du }
    }
}

#[inline]
fn accumulate(c: &mut f64, dc: &mut f64, coeff: f64, power: usize, u: f64) {
    *c += coeff * u.powi(power as i32);
    if power > 0 {
        *dc += coeff * power as f64 * u.powi(power as i32 - 1);
    }
}

/// Body-frame tangent of the exponential, `T(Ω) = Σₖ (−ad Ω)ᵏ / (k+1)!`.
pub fn dexp(omega: &Twist) -> Result<Matrix6<f64>> {
    if angular(omega).norm() >= std::f64::consts::PI {
        return Err(GvsError::DexpOutOfDomain);
    }
    Ok(tangent_exp(omega))
}

/// [`dexp`] without the domain check; valid up to (not including) 2π.
pub(crate) fn tangent_exp(omega: &Twist) -> Matrix6<f64> {
    let a = ad(omega);
    let k = tangent_coeffs(angular(omega).norm());
    let a2 = a * a;
    let a3 = a2 * a;
    let a4 = a2 * a2;
    Matrix6::identity() - a * k.c[0] + a2 * k.c[1] - a3 * k.c[2] + a4 * k.c[3]
}

/// Time derivative of `T(Ω(t))` given `Ω̇`.
pub(crate) fn tangent_exp_rate(omega: &Twist, omega_dot: &Twist) -> Matrix6<f64> {
    let a = ad(omega);
    let ad_ = ad(omega_dot);
    let k = tangent_coeffs(angular(omega).norm());
    let du = 2.0 * angular(omega).dot(&angular(omega_dot));
    let cd = k.dc_du.map(|d| d * du);
    let a2 = a * a;
    let a3 = a2 * a;
    let a4 = a2 * a2;
    let d1 = ad_;
    let d2 = ad_ * a + a * ad_;
    let d3 = ad_ * a2 + a * ad_ * a + a2 * ad_;
    let d4 = ad_ * a3 + a * ad_ * a2 + a2 * ad_ * a + a3 * ad_;
    -(a * cd[0] + d1 * k.c[0]) + (a2 * cd[1] + d2 * k.c[1]) - (a3 * cd[2] + d3 * k.c[2])
        + (a4 * cd[3] + d4 * k.c[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn close6(a: &Matrix6<f64>, b: &Matrix6<f64>, tol: f64) -> bool {
        (a - b).abs().max() < tol
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let g = exp_se3(&Twist::zeros());
        assert_eq!(g, Pose::identity());
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let g = exp_se3(&Twist::new(0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((g.rotation - expected).abs().max() < 1e-15);
        assert!(g.translation.norm() < 1e-15);
    }

    #[test]
    fn exp_pure_translation() {
        let g = exp_se3(&Twist::new(0.0, 0.0, 0.0, 2.5, 0.0, 0.0));
        assert_eq!(g.rotation, Matrix3::identity());
        assert_eq!(g.translation, Vector3::new(2.5, 0.0, 0.0));
    }

    #[test]
    fn log_identity_and_roundtrip() {
        assert_eq!(log_se3(&Pose::identity()).unwrap(), Twist::zeros());
        let xi = Twist::new(0.1, -0.2, 0.3, 0.4, 0.5, -0.6);
        let back = log_se3(&exp_se3(&xi)).unwrap();
        assert!((back - xi).norm() < 1e-14);
    }

    #[test]
    fn log_half_turn_is_singular() {
        let g = exp_se3(&Twist::new(PI, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert!(matches!(log_se3(&g), Err(GvsError::LogBranchSingularity)));
    }

    #[test]
    fn adjoint_blocks() {
        assert_eq!(adjoint(&Pose::identity()), Matrix6::identity());
        let g = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let a = adjoint(&g);
        let mut expected = Matrix6::identity();
        expected
            .fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&hat3(&Vector3::new(1.0, 0.0, 0.0)));
        assert_eq!(a, expected);
        let g = exp_se3(&Twist::new(0.3, -1.1, 0.7, 2.0, -0.4, 0.9));
        let lhs = adjoint(&g.inverse());
        let rhs = adjoint(&g).try_inverse().unwrap();
        assert!(close6(&lhs, &rhs, 1e-12));
        assert!(close6(&g.adjoint_inv(), &lhs, 1e-15));
    }

    #[test]
    fn ad_cross_product_identity() {
        assert_eq!(ad(&Twist::zeros()), Matrix6::zeros());
        let xi = Twist::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let eta = Twist::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        assert_eq!(ad(&xi) * eta, Twist::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0));
        assert_eq!(bracket(&xi, &eta), ad(&xi) * eta);
    }

    #[test]
    fn magnus_constant_and_commuting_fields() {
        let xi = Twist::new(0.2, -0.1, 0.5, 1.0, 0.1, 0.0);
        assert!((magnus4(&xi, &xi, 0.3).unwrap() - xi * 0.3).norm() < 1e-15);
        let a = Twist::new(0.0, 0.0, 0.0, 1.0, 2.0, 3.0);
        let b = Twist::new(0.0, 0.0, 0.0, -1.0, 0.5, 0.0);
        assert_eq!(magnus4(&a, &b, 0.5).unwrap(), (a + b) * 0.25);
        assert!(matches!(magnus4(&a, &b, 0.0), Err(GvsError::NonpositiveInterval)));
        assert!(matches!(magnus4(&a, &b, -1.0), Err(GvsError::NonpositiveInterval)));
    }

    #[test]
    fn dexp_special_cases() {
        assert_eq!(dexp(&Twist::zeros()).unwrap(), Matrix6::identity());
        let v = Twist::new(0.0, 0.0, 0.0, 0.3, -2.0, 1.0);
        let expected = Matrix6::identity() - ad(&v) * 0.5;
        assert!(close6(&dexp(&v).unwrap(), &expected, 1e-15));
        assert!(matches!(
            dexp(&Twist::new(0.0, PI, 0.0, 0.0, 0.0, 0.0)),
            Err(GvsError::DexpOutOfDomain)
        ));
    }

    // Truncated series Σ (−ad)^k/(k+1)! as an independent check of the
    // closed form on both sides of the series/closed-form switch.
    fn tangent_series(omega: &Twist) -> Matrix6<f64> {
        let a = -ad(omega);
        let mut term = Matrix6::identity();
        let mut sum = Matrix6::identity();
        for k in 1..60 {
            term = term * a / (k as f64 + 1.0);
            sum += term;
        }
        sum
    }

    #[test]
    fn tangent_matches_series() {
        for &scale in &[1e-8, 1e-3, 0.1, 0.19, 0.21, 0.7, 1.5, 2.8] {
            let omega = Twist::new(0.3, -0.5, 0.8, 1.2, -0.7, 0.4);
            let w = angular(&omega).normalize() * scale;
            let omega = twist(&w, &linear(&omega));
            let t = tangent_exp(&omega);
            assert!(close6(&t, &tangent_series(&omega), 1e-13), "scale {scale}");
        }
    }

    #[test]
    fn tangent_coefficient_derivatives() {
        for &theta in &[0.05f64, 0.15, 0.25, 1.0, 2.5] {
            let h = 1e-6;
            let u = theta * theta;
            let lo = tangent_coeffs((u - h).sqrt());
            let hi = tangent_coeffs((u + h).sqrt());
            let mid = tangent_coeffs(theta);
            for i in 0..4 {
                let fd = (hi.c[i] - lo.c[i]) / (2.0 * h);
                assert!((fd - mid.dc_du[i]).abs() < 1e-7, "theta {theta} coeff {i}");
            }
        }
    }

    #[test]
    fn tangent_rate_matches_finite_difference() {
        let omega = Twist::new(0.4, 0.9, -0.3, 0.2, 1.0, -0.5);
        let rate = Twist::new(-0.2, 0.5, 0.7, 1.1, 0.3, -0.9);
        let eps = 1e-6;
        let fd = (tangent_exp(&(omega + rate * eps)) - tangent_exp(&(omega - rate * eps))) / (2.0 * eps);
        assert!(close6(&tangent_exp_rate(&omega, &rate), &fd, 1e-8));
        let small = omega * 1e-3;
        let fd = (tangent_exp(&(small + rate * eps)) - tangent_exp(&(small - rate * eps))) / (2.0 * eps);
        assert!(close6(&tangent_exp_rate(&small, &rate), &fd, 1e-8));
    }

    #[test]
    fn hat_vee_inverse() {
        let xi = Twist::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        assert_eq!(vee(&hat(&xi)), xi);
        let m = hat(&xi);
        assert_eq!(m.row(3).into_owned(), nalgebra::RowVector4::zeros());
    }
}
