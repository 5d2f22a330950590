//! Cross-section geometry, linear-elastic material law, cross-sectional screw
//! tensors and polynomial strain bases of soft divisions.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix6, Matrix6xX, Vector6};

use crate::error::{GvsError, Result};
use crate::quadrature::shifted_legendre;
use crate::se3::Twist;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionShape {
    /// Parameter: radius.
    Circular,
    /// Parameters: width along local y, height along local z.
    Rectangular,
    /// Parameters: semi-axis along local y, semi-axis along local z.
    Ellipsoidal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionProperties {
    pub area: f64,
    pub iy: f64,
    pub iz: f64,
    pub jt: f64,
}

/// Tabulated section properties, linearly interpolated in the abscissa.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionTable {
    /// Rows of `(X, A, I_y, I_z, J_t)` with strictly increasing `X` spanning `[0, 1]`.
    pub rows: Vec<[f64; 5]>,
}

/// Cross-section whose dimensions vary linearly from `X = 0` to `X = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    pub shape: SectionShape,
    pub start: [f64; 2],
    pub end: [f64; 2],
    /// Shear correction factors applied to `G·A` for shear along y and z.
    pub shear_factors: [f64; 2],
    pub table: Option<SectionTable>,
}

impl CrossSection {
    pub fn circular(radius: f64) -> Self {
        Self::tapered_circular(radius, radius)
    }

    pub fn tapered_circular(r0: f64, r1: f64) -> Self {
        Self {
            shape: SectionShape::Circular,
            start: [r0, 0.0],
            end: [r1, 0.0],
            shear_factors: [1.0, 1.0],
            table: None,
        }
    }

    pub fn rectangular(width: f64, height: f64) -> Self {
        Self {
            shape: SectionShape::Rectangular,
            start: [width, height],
            end: [width, height],
            shear_factors: [1.0, 1.0],
            table: None,
        }
    }

    pub fn ellipsoidal(a: f64, b: f64) -> Self {
        Self {
            shape: SectionShape::Ellipsoidal,
            start: [a, b],
            end: [a, b],
            shear_factors: [1.0, 1.0],
            table: None,
        }
    }

    /// Dimensions at the normalized abscissa `x`.
    pub fn dimensions(&self, x: f64) -> [f64; 2] {
        [
            self.start[0] + (self.end[0] - self.start[0]) * x,
            self.start[1] + (self.end[1] - self.start[1]) * x,
        ]
    }

    /// Radius of the circle enclosing the section, used for cable path checks.
    pub fn bounding_radius(&self, x: f64) -> f64 {
        let [a, b] = self.dimensions(x);
        match self.shape {
            SectionShape::Circular => a,
            SectionShape::Rectangular => 0.5 * a.min(b),
            SectionShape::Ellipsoidal => a.min(b),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let used = match self.shape {
            SectionShape::Circular => 1,
            _ => 2,
        };
        for d in self.start[..used].iter().chain(&self.end[..used]) {
            if !(d.is_finite() && *d > 0.0) {
                return Err(GvsError::InvalidModel(format!(
                    "section dimensions must be positive, got {d}"
                )));
            }
        }
        if let Some(t) = &self.table {
            if t.rows.len() < 2 || t.rows[0][0] != 0.0 || t.rows[t.rows.len() - 1][0] != 1.0 {
                return Err(GvsError::InvalidModel(
                    "section table must span X = 0..1".into(),
                ));
            }
            if t.rows.windows(2).any(|w| w[1][0] <= w[0][0]) {
                return Err(GvsError::InvalidModel(
                    "section table abscissae must increase".into(),
                ));
            }
            if t.rows.iter().any(|r| r[1..].iter().any(|v| !(*v > 0.0))) {
                return Err(GvsError::InvalidModel(
                    "section table values must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Torsion constant of a solid rectangle, `β(w, h)·min³·max`.
fn rectangle_torsion(w: f64, h: f64) -> f64 {
    let (a, b) = if w >= h { (w, h) } else { (h, w) };
    let r = b / a;
    let beta = 1.0 / 3.0 - 0.21 * r * (1.0 - r.powi(4) / 12.0);
    beta * a * b * b * b
}

/// Area, second moments and torsion constant at the normalized abscissa `x`.
pub fn section_properties(cs: &CrossSection, x: f64) -> Result<SectionProperties> {
    if !(0.0..=1.0).contains(&x) {
        return Err(GvsError::AbscissaOutOfRange(x));
    }
    if let Some(t) = &cs.table {
        let i = t.rows.partition_point(|r| r[0] <= x).clamp(1, t.rows.len() - 1);
        let (r0, r1) = (&t.rows[i - 1], &t.rows[i]);
        let s = (x - r0[0]) / (r1[0] - r0[0]);
        let lerp = |k: usize| r0[k] + (r1[k] - r0[k]) * s;
        return Ok(SectionProperties {
            area: lerp(1),
            iy: lerp(2),
            iz: lerp(3),
            jt: lerp(4),
        });
    }
    let [a, b] = cs.dimensions(x);
    let pi = std::f64::consts::PI;
    Ok(match cs.shape {
        SectionShape::Circular => {
            let i = pi * a.powi(4) / 4.0;
            SectionProperties {
                area: pi * a * a,
                iy: i,
                iz: i,
                jt: 2.0 * i,
            }
        }
        SectionShape::Rectangular => SectionProperties {
            area: a * b,
            iy: a * b.powi(3) / 12.0,
            iz: b * a.powi(3) / 12.0,
            jt: rectangle_torsion(a, b),
        },
        SectionShape::Ellipsoidal => SectionProperties {
            area: pi * a * b,
            iy: pi * a * b.powi(3) / 4.0,
            iz: pi * a.powi(3) * b / 4.0,
            jt: pi * a.powi(3) * b.powi(3) / (a * a + b * b),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    /// Young's modulus (Pa).
    pub youngs_modulus: f64,
    pub poisson: f64,
    /// Density (kg/m³).
    pub density: f64,
    /// Kelvin–Voigt viscous modulus (Pa·s).
    pub viscosity: f64,
}

impl Material {
    pub fn new(youngs_modulus: f64, poisson: f64, density: f64) -> Self {
        Self {
            youngs_modulus,
            poisson,
            density,
            viscosity: 0.0,
        }
    }

    pub fn with_viscosity(mut self, viscosity: f64) -> Self {
        self.viscosity = viscosity;
        self
    }

    pub fn shear_modulus(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.youngs_modulus.is_finite()
            && self.youngs_modulus >= 0.0
            && self.poisson > -1.0
            && self.poisson <= 0.5
            && self.density.is_finite()
            && self.density >= 0.0
            && self.viscosity.is_finite()
            && self.viscosity >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(GvsError::InvalidModel(format!("invalid material {self:?}")))
        }
    }
}

/// Cross-sectional screw inertia `ρ·diag(I_y+I_z, I_y, I_z, A, A, A)` per unit length.
pub fn screw_inertia(cs: &CrossSection, mat: &Material, x: f64) -> Result<Matrix6<f64>> {
    let p = section_properties(cs, x)?;
    let rho = mat.density;
    Ok(Matrix6::from_diagonal(&Vector6::new(
        rho * (p.iy + p.iz),
        rho * p.iy,
        rho * p.iz,
        rho * p.area,
        rho * p.area,
        rho * p.area,
    )))
}

/// Linear-elastic screw stiffness `diag(G·J_t, E·I_y, E·I_z, E·A, G·A, G·A)`.
pub fn screw_stiffness(cs: &CrossSection, mat: &Material, x: f64) -> Result<Matrix6<f64>> {
    let p = section_properties(cs, x)?;
    let e = mat.youngs_modulus;
    let g = mat.shear_modulus();
    Ok(Matrix6::from_diagonal(&Vector6::new(
        g * p.jt,
        e * p.iy,
        e * p.iz,
        e * p.area,
        g * p.area * cs.shear_factors[0],
        g * p.area * cs.shear_factors[1],
    )))
}

/// Kelvin–Voigt damping tensor, the stiffness scaled by `η_d / E`.
pub fn damping_tensor(cs: &CrossSection, mat: &Material, x: f64) -> Result<Matrix6<f64>> {
    if mat.viscosity == 0.0 || mat.youngs_modulus == 0.0 {
        section_properties(cs, x)?;
        return Ok(Matrix6::zeros());
    }
    Ok(screw_stiffness(cs, mat, x)? * (mat.viscosity / mat.youngs_modulus))
}

/// User replacement for a cross-sectional tensor: receives the abscissa and the
/// default tensor, returns the tensor to use.
pub type TensorFn = dyn Fn(f64, &Matrix6<f64>) -> Matrix6<f64> + Send + Sync;

#[derive(Clone)]
pub struct TensorOverride(pub Arc<TensorFn>);

impl TensorOverride {
    pub fn new(f: impl Fn(f64, &Matrix6<f64>) -> Matrix6<f64> + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn apply(&self, x: f64, default: &Matrix6<f64>) -> Matrix6<f64> {
        (self.0)(x, default)
    }
}

impl fmt::Debug for TensorOverride {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("TensorOverride(..)")
    }
}

/// The six deformation modes, in twist order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Torsion = 0,
    BendY = 1,
    BendZ = 2,
    Stretch = 3,
    ShearY = 4,
    ShearZ = 5,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Torsion,
        Mode::BendY,
        Mode::BendZ,
        Mode::Stretch,
        Mode::ShearY,
        Mode::ShearZ,
    ];

    pub fn is_angular(self) -> bool {
        (self as usize) < 3
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Torsion => "torsion",
            Mode::BendY => "bend_y",
            Mode::BendZ => "bend_z",
            Mode::Stretch => "stretch",
            Mode::ShearY => "shear_y",
            Mode::ShearZ => "shear_z",
        }
    }

    pub fn from_name(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Reference strain `ξ*(X)` as a polynomial in the normalized abscissa.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStrain {
    /// Coefficients of `1, X, X², …`.
    pub coefficients: Vec<Twist>,
}

impl ReferenceStrain {
    pub fn constant(xi: Twist) -> Self {
        Self {
            coefficients: vec![xi],
        }
    }

    /// The straight, unstretched rod `(0, 0, 0, 1, 0, 0)`.
    pub fn straight() -> Self {
        Self::constant(Twist::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0))
    }

    pub fn eval(&self, x: f64) -> Twist {
        self.coefficients
            .iter()
            .rev()
            .fold(Twist::zeros(), |acc, c| acc * x + c)
    }
}

impl Default for ReferenceStrain {
    fn default() -> Self {
        Self::straight()
    }
}

/// Enabled modes with their polynomial orders, plus the reference strain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StrainBasisSpec {
    pub orders: [Option<usize>; 6],
    pub reference: ReferenceStrain,
}

impl StrainBasisSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_mode(mut self, mode: Mode, order: usize) -> Self {
        self.orders[mode as usize] = Some(order);
        self
    }

    pub fn with_reference(mut self, reference: ReferenceStrain) -> Self {
        self.reference = reference;
        self
    }

    /// Inextensible, unshearable rod with the three angular modes.
    pub fn kirchhoff(order: usize) -> Self {
        Self::new()
            .with_mode(Mode::Torsion, order)
            .with_mode(Mode::BendY, order)
            .with_mode(Mode::BendZ, order)
    }

    pub fn all_modes(angular_order: usize, linear_order: usize) -> Self {
        Mode::ALL.into_iter().fold(Self::new(), |s, m| {
            s.with_mode(m, if m.is_angular() { angular_order } else { linear_order })
        })
    }

    pub fn dof(&self) -> usize {
        self.orders.iter().flatten().map(|p| p + 1).sum()
    }

    pub fn max_order(&self) -> usize {
        self.orders.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Mode of each basis column, in column order.
    pub fn column_modes(&self) -> Vec<Mode> {
        let mut out = Vec::with_capacity(self.dof());
        for m in Mode::ALL {
            if let Some(p) = self.orders[m as usize] {
                out.extend(std::iter::repeat_n(m, p + 1));
            }
        }
        out
    }
}

/// Basis matrix `Φ(X)` (6 × n) and reference strain `ξ*(X)`.
pub fn basis_eval(spec: &StrainBasisSpec, x: f64) -> (Matrix6xX<f64>, Twist) {
    let mut phi = Matrix6xX::zeros(spec.dof());
    let mut buf = Vec::new();
    let mut col = 0;
    for m in Mode::ALL {
        if let Some(p) = spec.orders[m as usize] {
            shifted_legendre(p, x, &mut buf);
            for v in &buf {
                phi[(m as usize, col)] = *v;
                col += 1;
            }
        }
    }
    (phi, spec.reference.eval(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussRule;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn circle_properties() {
        let p = section_properties(&CrossSection::circular(0.01), 0.3).unwrap();
        assert!(rel(p.area, 3.14159265e-4) < 1e-8);
        assert!(rel(p.iy, 7.85398163e-9) < 1e-8);
        assert!(rel(p.jt, 1.57079633e-8) < 1e-8);
    }

    #[test]
    fn square_properties() {
        let p = section_properties(&CrossSection::rectangular(0.05, 0.05), 0.0).unwrap();
        assert!(rel(p.area, 2.5e-3) < 1e-12);
        assert!(rel(p.iy, 5.208333e-7) < 1e-6);
        assert!(rel(p.iz, p.iy) < 1e-15);
        // square torsion coefficient ≈ 0.1406
        assert!((p.jt / 0.05f64.powi(4) - 0.1406).abs() < 5e-4);
    }

    #[test]
    fn tapered_circle_midpoint() {
        let cs = CrossSection::tapered_circular(0.02, 0.01);
        assert!((cs.dimensions(0.5)[0] - 0.015).abs() < 1e-15);
    }

    #[test]
    fn abscissa_out_of_range() {
        let cs = CrossSection::circular(0.01);
        assert!(matches!(section_properties(&cs, 1.5), Err(GvsError::AbscissaOutOfRange(_))));
        assert!(matches!(section_properties(&cs, -0.1), Err(GvsError::AbscissaOutOfRange(_))));
    }

    #[test]
    fn table_override_wins() {
        let mut cs = CrossSection::circular(0.01);
        cs.table = Some(SectionTable {
            rows: vec![[0.0, 1.0, 2.0, 3.0, 4.0], [1.0, 3.0, 4.0, 5.0, 6.0]],
        });
        let p = section_properties(&cs, 0.5).unwrap();
        assert_eq!((p.area, p.iy, p.iz, p.jt), (2.0, 3.0, 4.0, 5.0));
    }

    #[test]
    fn inertia_and_stiffness_values() {
        let cs = CrossSection::circular(0.01);
        let m = screw_inertia(&cs, &Material::new(1e6, 0.5, 1000.0), 0.0).unwrap();
        assert!(rel(m[(3, 3)], 0.314159265) < 1e-8);
        let zero = screw_inertia(&cs, &Material::new(1e6, 0.5, 0.0), 0.0).unwrap();
        assert_eq!(zero, Matrix6::zeros());

        let k = screw_stiffness(&cs, &Material::new(1e6, 0.5, 1000.0), 0.0).unwrap();
        assert!(rel(k[(3, 3)], 314.159265) < 1e-8);
        assert!(rel(k[(1, 1)], 7.85398163e-3) < 1e-8);
        assert!(rel(k[(0, 0)], 5.23598776e-3) < 1e-8);
        assert_eq!(Material::new(2.0, 0.0, 1.0).shear_modulus(), 1.0);
    }

    #[test]
    fn damping_is_scaled_stiffness() {
        let cs = CrossSection::tapered_circular(0.02, 0.01);
        let undamped = Material::new(1e6, 0.5, 1000.0);
        assert_eq!(damping_tensor(&cs, &undamped, 0.4).unwrap(), Matrix6::zeros());
        let damped = undamped.with_viscosity(11.2e3);
        let d = damping_tensor(&cs, &damped, 0.4).unwrap();
        let k = screw_stiffness(&cs, &damped, 0.4).unwrap();
        assert!((d - k * 0.0112).abs().max() < 1e-15);
    }

    #[test]
    fn basis_dimensions() {
        let single = StrainBasisSpec::new().with_mode(Mode::Stretch, 0);
        let (phi, xi) = basis_eval(&single, 0.7);
        assert_eq!(phi.ncols(), 1);
        assert_eq!(phi[(3, 0)], 1.0);
        assert_eq!(phi.column(0).sum(), 1.0);
        assert_eq!(xi, Twist::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0));

        assert_eq!(StrainBasisSpec::new().with_mode(Mode::BendY, 4).dof(), 5);
        assert_eq!(StrainBasisSpec::kirchhoff(3).dof(), 12);
        assert_eq!(StrainBasisSpec::all_modes(2, 1).dof(), 15);
    }

    #[test]
    fn basis_gram_nonsingular() {
        let spec = StrainBasisSpec::all_modes(3, 2);
        let rule = GaussRule::new(spec.max_order() + 1);
        let n = spec.dof();
        let mut gram = nalgebra::DMatrix::zeros(n, n);
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let (phi, _) = basis_eval(&spec, *x);
            gram += phi.transpose() * &phi * *w;
        }
        assert!(gram.clone().cholesky().is_some());
        // disabling one mode removes exactly its columns
        let mut fewer = spec.clone();
        fewer.orders[Mode::ShearZ as usize] = None;
        assert_eq!(spec.dof() - fewer.dof(), 3);
    }

    #[test]
    fn stiffness_override_hook() {
        let ov = TensorOverride::new(|_, k| k * 2.0);
        let cs = CrossSection::circular(0.01);
        let k = screw_stiffness(&cs, &Material::new(1e6, 0.3, 1.0), 0.5).unwrap();
        assert_eq!(ov.apply(0.5, &k), k * 2.0);
    }
}
