//! Material, damping, circuit and parameter types, plus closed-form oracles
//! for a clamped Euler–Bernoulli strip.
//!
//! Everything is stored in SI base units. Voigt ordering throughout the crate
//! is `[xx, yy, zz, yz, xz, xy]` with engineering shear strains.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix6, SMatrix};

use crate::error::{Error, Result};

/// Vacuum permittivity in F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.8541878128e-12;

/// Standard gravity in m/s², acting along −z.
pub const GRAVITY: f64 = 9.81;

/// First root of the clamped-free characteristic equation, `β₁l`.
pub const CLAMPED_FREE_ROOT: f64 = 1.8751;

pub type Matrix3x6 = SMatrix<f64, 3, 6>;

/// Isotropic linear-elastic material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticMaterial {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
}

impl ElasticMaterial {
    pub fn new(young_modulus: f64, poisson_ratio: f64, density: f64) -> Result<Self> {
        let m = Self {
            young_modulus,
            poisson_ratio,
            density,
        };
        m.validate()?;
        Ok(m)
    }

    /// Mild steel of the beam: ρ from the strip mass and volume, E from the
    /// pulse–echo wave speed.
    pub fn beam_steel() -> Self {
        Self {
            young_modulus: 189e9,
            poisson_ratio: 0.3,
            density: 8014.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young_modulus > 0.0 && self.young_modulus.is_finite()) {
            return Err(Error::invalid("young_modulus", "must be positive"));
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return Err(Error::invalid(
                "poisson_ratio",
                format!("{} outside (-1, 0.5)", self.poisson_ratio),
            ));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::invalid("density", "must be positive"));
        }
        Ok(())
    }

    /// First Lamé parameter Λ.
    pub fn lame_lambda(&self) -> f64 {
        let nu = self.poisson_ratio;
        nu * self.young_modulus / ((1.0 + nu) * (1.0 - 2.0 * nu))
    }

    /// Shear modulus G.
    pub fn shear_modulus(&self) -> f64 {
        self.young_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    /// Copy with a different Young's modulus.
    pub fn with_young_modulus(&self, young_modulus: f64) -> Self {
        Self {
            young_modulus,
            ..*self
        }
    }
}

/// Isotropic stiffness in Voigt form, `σ = C ε`.
pub fn isotropic_stiffness_voigt(mat: &ElasticMaterial) -> Result<Matrix6<f64>> {
    if (mat.poisson_ratio - 0.5).abs() < f64::EPSILON {
        return Err(Error::SingularParameter(
            "poisson_ratio = 0.5 (incompressible) makes Λ unbounded".into(),
        ));
    }
    mat.validate()?;
    let lam = mat.lame_lambda();
    let g = mat.shear_modulus();
    let mut c = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = lam;
        }
        c[(i, i)] = lam + 2.0 * g;
        c[(i + 3, i + 3)] = g;
    }
    Ok(c)
}

/// Longitudinal (P-wave) speed `c₁ = √((Λ + 2G)/ρ)`.
pub fn longitudinal_wave_speed(mat: &ElasticMaterial) -> f64 {
    ((mat.lame_lambda() + 2.0 * mat.shear_modulus()) / mat.density).sqrt()
}

/// Young's modulus recovered from a measured longitudinal wave speed.
pub fn modulus_from_wave_speed(c1: f64, poisson_ratio: f64, density: f64) -> Result<f64> {
    if !(c1 > 0.0) {
        return Err(Error::invalid("c1", "must be positive"));
    }
    if !(poisson_ratio > -1.0 && poisson_ratio < 0.5) {
        return Err(Error::invalid("poisson_ratio", "outside (-1, 0.5)"));
    }
    if !(density > 0.0) {
        return Err(Error::invalid("density", "must be positive"));
    }
    let nu = poisson_ratio;
    Ok(density * c1 * c1 * (1.0 + nu) * (1.0 - 2.0 * nu) / (1.0 - nu))
}

/// Transversely isotropic piezoceramic poled along z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiezoMaterial {
    /// Stiffness at constant electric field, Pa.
    pub stiffness_voigt: Matrix6<f64>,
    /// Piezoelectric stress coefficients `e`, C/m².
    pub coupling_voigt: Matrix3x6,
    /// Permittivity at constant strain, F/m.
    pub permittivity: Matrix3<f64>,
    pub density: f64,
}

impl PiezoMaterial {
    /// Construct from relative permittivities, multiplying by ε₀.
    pub fn new(
        stiffness_voigt: Matrix6<f64>,
        coupling_voigt: Matrix3x6,
        relative_permittivity: Matrix3<f64>,
        density: f64,
    ) -> Result<Self> {
        let m = Self {
            stiffness_voigt,
            coupling_voigt,
            permittivity: relative_permittivity * VACUUM_PERMITTIVITY,
            density,
        };
        m.validate()?;
        Ok(m)
    }

    /// PIC 181 manufacturer data.
    pub fn pic181() -> Self {
        let gpa = 1e9;
        #[rustfmt::skip]
        let c = Matrix6::from_row_slice(&[
            144.1, 79.65, 81.45, 0.0,   0.0,   0.0,
            79.65, 144.1, 81.45, 0.0,   0.0,   0.0,
            81.45, 81.45, 134.4, 0.0,   0.0,   0.0,
            0.0,   0.0,   0.0,   27.29, 0.0,   0.0,
            0.0,   0.0,   0.0,   0.0,   27.29, 0.0,
            0.0,   0.0,   0.0,   0.0,   0.0,   32.22,
        ]) * gpa;
        #[rustfmt::skip]
        let e = Matrix3x6::from_row_slice(&[
            0.0,    0.0,    0.0,   0.0,  10.7, 0.0,
            0.0,    0.0,    0.0,   10.7, 0.0,  0.0,
            -5.256, -5.256, 14.53, 0.0,  0.0,  0.0,
        ]);
        let eps_r = Matrix3::from_diagonal(&nalgebra::Vector3::new(717.0, 717.0, 665.0));
        Self::new(c, e, eps_r, 7890.0).expect("PIC 181 constants are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.stiffness_voigt;
        if (c - c.transpose()).norm() > 1e-12 * c.norm() {
            return Err(Error::invalid("stiffness_voigt", "not symmetric"));
        }
        if c.cholesky().is_none() {
            return Err(Error::invalid("stiffness_voigt", "not positive definite"));
        }
        let p = &self.permittivity;
        if (p - p.transpose()).norm() > 1e-12 * p.norm() {
            return Err(Error::invalid("permittivity", "not symmetric"));
        }
        if p.cholesky().is_none() {
            return Err(Error::invalid("permittivity", "not positive definite"));
        }
        if !(self.density > 0.0) {
            return Err(Error::invalid("density", "must be positive"));
        }
        Ok(())
    }

    /// Permittivity component along the poling axis, ε₃₃.
    pub fn eps33(&self) -> f64 {
        self.permittivity[(2, 2)]
    }
}

/// Rayleigh damping `C = αM + βK`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RayleighDamping {
    pub alpha: f64,
    pub beta: f64,
}

impl RayleighDamping {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be non-negative"));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid("beta", "must be non-negative"));
        }
        Ok(Self { alpha, beta })
    }

    pub fn undamped() -> Self {
        Self::default()
    }
}

/// Parallel RC load of the measuring instrument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitParams {
    pub resistance: f64,
    pub capacitance: f64,
}

impl CircuitParams {
    pub fn new(resistance: f64, capacitance: f64) -> Result<Self> {
        if !(resistance > 0.0 && resistance.is_finite()) {
            return Err(Error::invalid("resistance", "must be positive"));
        }
        if !(capacitance >= 0.0 && capacitance.is_finite()) {
            return Err(Error::invalid("capacitance", "must be non-negative"));
        }
        Ok(Self {
            resistance,
            capacitance,
        })
    }

    /// Practically open circuit: 1 TΩ, no capacitance.
    pub fn open() -> Self {
        Self {
            resistance: 1e12,
            capacitance: 0.0,
        }
    }
}

/// Rectangular cross-section strip of given active (free) length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamGeometry {
    pub active_length: f64,
    pub width: f64,
    pub thickness: f64,
}

impl BeamGeometry {
    pub fn new(active_length: f64, width: f64, thickness: f64) -> Result<Self> {
        let g = Self {
            active_length,
            width,
            thickness,
        };
        g.validate()?;
        Ok(g)
    }

    /// 102 mm × 20 mm × 1.905 mm steel strip.
    pub fn reference_strip() -> Self {
        Self {
            active_length: 0.102,
            width: 0.020,
            thickness: 1.905e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("active_length", self.active_length),
            ("width", self.width),
            ("thickness", self.thickness),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.width * self.thickness
    }

    pub fn second_moment(&self) -> f64 {
        self.width * self.thickness.powi(3) / 12.0
    }
}

/// First bending eigenfrequency of a clamped-free Euler–Bernoulli beam, Hz.
pub fn bernoulli_first_frequency(geom: &BeamGeometry, mat: &ElasticMaterial) -> f64 {
    let l = geom.active_length;
    let stiffness = mat.young_modulus * geom.second_moment();
    let inertia = mat.density * geom.area() * l.powi(4);
    CLAMPED_FREE_ROOT.powi(2) / (2.0 * PI) * (stiffness / inertia).sqrt()
}

/// Static tip deflection `F L³ / (3 E I)` of a clamped-free beam, m.
pub fn cantilever_tip_deflection(geom: &BeamGeometry, mat: &ElasticMaterial, tip_force: f64) -> f64 {
    tip_force * geom.active_length.powi(3) / (3.0 * mat.young_modulus * geom.second_moment())
}

/// Identified parameters θ = [α, β, E, R, C].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    Alpha,
    Beta,
    YoungModulus,
    Resistance,
    Capacitance,
}

impl Param {
    pub const ALL: [Param; 5] = [
        Param::Alpha,
        Param::Beta,
        Param::YoungModulus,
        Param::Resistance,
        Param::Capacitance,
    ];

    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::Alpha => "alpha",
            Param::Beta => "beta",
            Param::YoungModulus => "E",
            Param::Resistance => "R",
            Param::Capacitance => "C",
        }
    }

    /// Whether the optimizers work with this parameter on a log scale.
    pub fn log_scaled(self) -> bool {
        matches!(
            self,
            Param::YoungModulus | Param::Resistance | Param::Capacitance
        )
    }
}

/// Values of θ in physical units, indexed by [`Param`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterSet(pub [f64; 5]);

impl ParameterSet {
    pub fn new(alpha: f64, beta: f64, young_modulus: f64, resistance: f64, capacitance: f64) -> Self {
        Self([alpha, beta, young_modulus, resistance, capacitance])
    }

    pub fn get(&self, p: Param) -> f64 {
        self.0[p.index()]
    }

    pub fn set(&mut self, p: Param, v: f64) {
        self.0[p.index()] = v;
    }

    pub fn damping(&self) -> RayleighDamping {
        RayleighDamping {
            alpha: self.get(Param::Alpha),
            beta: self.get(Param::Beta),
        }
    }

    pub fn circuit(&self) -> CircuitParams {
        CircuitParams {
            resistance: self.get(Param::Resistance),
            capacitance: self.get(Param::Capacitance),
        }
    }

    pub fn young_modulus(&self) -> f64 {
        self.get(Param::YoungModulus)
    }

    /// Starting values used before identification.
    pub fn initial_guess() -> Self {
        Self::new(0.1, 1e-6, 189e9, 10e6, 1e-9)
    }

    /// Optimum of the sequential least-squares identification.
    pub fn trf_optimum() -> Self {
        Self::new(0.011, 2.5e-6, 182e9, 5.5e6, 0.72e-9)
    }

    /// Optimum of the global CMA-ES identification.
    pub fn cmaes_optimum() -> Self {
        Self::new(0.2981, 4.791e-6, 181.46e9, 5.73e6, 0.685e-9)
    }
}

/// Box constraints on θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterBounds {
    pub lower: ParameterSet,
    pub upper: ParameterSet,
}

impl ParameterBounds {
    pub fn new(lower: ParameterSet, upper: ParameterSet) -> Result<Self> {
        for p in Param::ALL {
            let (lo, hi) = (lower.get(p), upper.get(p));
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid("bounds", format!("{}: need lower < upper", p.name())));
            }
            if p.log_scaled() && lo <= 0.0 {
                return Err(Error::invalid("bounds", format!("{}: log-scaled bound must be positive", p.name())));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Search box used for identification.
    pub fn reference() -> Self {
        Self {
            lower: ParameterSet::new(0.01, 0.1e-6, 140e9, 1e6, 0.01e-9),
            upper: ParameterSet::new(10.0, 100e-6, 200e9, 50e6, 2e-9),
        }
    }

    pub fn contains(&self, theta: &ParameterSet) -> bool {
        Param::ALL
            .iter()
            .all(|&p| theta.get(p) >= self.lower.get(p) && theta.get(p) <= self.upper.get(p))
    }

    /// Map a physical value into `[0, 1]` (log map for E, R, C).
    pub fn to_unit(&self, p: Param, value: f64) -> f64 {
        let (lo, hi) = (self.lower.get(p), self.upper.get(p));
        if p.log_scaled() {
            (value.ln() - lo.ln()) / (hi.ln() - lo.ln())
        } else {
            (value - lo) / (hi - lo)
        }
    }

    pub fn from_unit(&self, p: Param, z: f64) -> f64 {
        let (lo, hi) = (self.lower.get(p), self.upper.get(p));
        if p.log_scaled() {
            (lo.ln() + z * (hi.ln() - lo.ln())).exp()
        } else {
            lo + z * (hi - lo)
        }
    }

    /// `d value / d z` at unit coordinate `z`.
    pub fn unit_derivative(&self, p: Param, z: f64) -> f64 {
        let (lo, hi) = (self.lower.get(p), self.upper.get(p));
        if p.log_scaled() {
            self.from_unit(p, z) * (hi.ln() - lo.ln())
        } else {
            hi - lo
        }
    }

    pub fn set_to_unit(&self, theta: &ParameterSet) -> [f64; 5] {
        let mut z = [0.0; 5];
        for p in Param::ALL {
            z[p.index()] = self.to_unit(p, theta.get(p));
        }
        z
    }

    pub fn set_from_unit(&self, z: &[f64; 5]) -> ParameterSet {
        let mut theta = ParameterSet([0.0; 5]);
        for p in Param::ALL {
            // Clamp round-off so the physical value never leaves the box.
            let v = self.from_unit(p, z[p.index()]);
            theta.set(p, v.clamp(self.lower.get(p), self.upper.get(p)));
        }
        theta
    }
}

/// θ together with its admissible box; `lower ≤ value ≤ upper` always holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterVector {
    value: ParameterSet,
    bounds: ParameterBounds,
}

impl ParameterVector {
    pub fn new(value: ParameterSet, bounds: ParameterBounds) -> Result<Self> {
        for p in Param::ALL {
            let v = value.get(p);
            if !(v >= bounds.lower.get(p) && v <= bounds.upper.get(p)) {
                return Err(Error::invalid(
                    "theta",
                    format!(
                        "{} = {:e} outside [{:e}, {:e}]",
                        p.name(),
                        v,
                        bounds.lower.get(p),
                        bounds.upper.get(p)
                    ),
                ));
            }
        }
        Ok(Self { value, bounds })
    }

    pub fn value(&self) -> &ParameterSet {
        &self.value
    }

    pub fn bounds(&self) -> &ParameterBounds {
        &self.bounds
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn steel_voigt_entries() {
        let c = isotropic_stiffness_voigt(&ElasticMaterial::beam_steel()).unwrap();
        // Λ = νE/((1+ν)(1−2ν)), G = E/(2(1+ν)) evaluated by hand.
        let lam = 0.3 * 189e9 / (1.3 * 0.4);
        let g = 189e9 / 2.6;
        assert_relative_eq!(c[(0, 0)], lam + 2.0 * g, max_relative = 1e-14);
        assert_relative_eq!(c[(0, 0)] / 1e9, 254.42, epsilon = 0.01);
        assert_relative_eq!(c[(3, 3)] / 1e9, 72.69, epsilon = 0.01);
        assert_relative_eq!(c[(0, 1)], lam, max_relative = 1e-14);
    }

    #[test]
    fn zero_poisson_decouples() {
        let c = isotropic_stiffness_voigt(&ElasticMaterial::new(1.0, 0.0, 1.0).unwrap()).unwrap();
        let expected = Matrix6::from_diagonal(&nalgebra::Vector6::new(1.0, 1.0, 1.0, 0.5, 0.5, 0.5));
        assert_relative_eq!(c, expected, epsilon = 1e-15);
    }

    #[test]
    fn incompressible_is_singular() {
        let m = ElasticMaterial {
            young_modulus: 1.0,
            poisson_ratio: 0.5,
            density: 1.0,
        };
        assert!(matches!(
            isotropic_stiffness_voigt(&m),
            Err(Error::SingularParameter(_))
        ));
        assert!(ElasticMaterial::new(1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn stiffness_is_spd_on_poisson_grid() {
        for k in 0..150 {
            let nu = -0.99 + k as f64 * 0.0099;
            let c = isotropic_stiffness_voigt(&ElasticMaterial::new(1e9, nu, 1.0).unwrap()).unwrap();
            assert_relative_eq!(c, c.transpose(), epsilon = 0.0);
            let eig = c.symmetric_eigenvalues();
            assert!(eig.iter().all(|&l| l > 0.0), "nu = {nu}: {eig:?}");
        }
    }

    #[test]
    fn wave_speed_modulus_pairs() {
        let e_tab = modulus_from_wave_speed(5693.0, 0.3, 7850.0).unwrap();
        let e_strip = modulus_from_wave_speed(5693.0, 0.3, 8014.5).unwrap();
        // ρ c² (1+ν)(1−2ν)/(1−ν) evaluated by hand: 1.8900e11 and 1.9296e11.
        assert_relative_eq!(e_tab, 7850.0 * 5693.0f64.powi(2) * 1.3 * 0.4 / 0.7, max_relative = 1e-14);
        assert!((e_tab / 1e9 - 189.0).abs() < 0.5, "{e_tab}");
        assert!((e_strip / 1e9 - 193.0).abs() < 0.5, "{e_strip}");
    }

    #[test]
    fn analytic_first_frequency() {
        let f = bernoulli_first_frequency(&BeamGeometry::reference_strip(), &ElasticMaterial::beam_steel());
        assert!((f - 143.62).abs() < 0.05, "{f}");
    }

    #[test]
    fn frequency_scaling_laws() {
        let g = BeamGeometry::reference_strip();
        let m = ElasticMaterial::beam_steel();
        let f = bernoulli_first_frequency(&g, &m);
        let long = BeamGeometry {
            active_length: 2.0 * g.active_length,
            ..g
        };
        assert_relative_eq!(bernoulli_first_frequency(&long, &m) / f, 0.25, max_relative = 1e-12);
        let stiff = m.with_young_modulus(4.0 * m.young_modulus);
        assert_relative_eq!(bernoulli_first_frequency(&g, &stiff) / f, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn tip_deflection() {
        let g = BeamGeometry::reference_strip();
        let m = ElasticMaterial::beam_steel();
        let d = cantilever_tip_deflection(&g, &m, 2.766);
        assert!((d * 1e3 - 0.4494).abs() < 5e-4, "{d}");
        assert_eq!(cantilever_tip_deflection(&g, &m, 0.0), 0.0);
        assert_eq!(cantilever_tip_deflection(&g, &m, 2.0 * 1.3), 2.0 * cantilever_tip_deflection(&g, &m, 1.3));
    }

    #[test]
    fn pic181_permittivity_scaled() {
        let p = PiezoMaterial::pic181();
        assert_relative_eq!(p.eps33(), 665.0 * VACUUM_PERMITTIVITY, max_relative = 1e-15);
        assert_relative_eq!(p.permittivity[(0, 0)], 717.0 * VACUUM_PERMITTIVITY, max_relative = 1e-15);
        assert_eq!(p.coupling_voigt[(0, 4)], 10.7);
        assert_eq!(p.coupling_voigt[(2, 2)], 14.53);
    }

    #[test]
    fn unit_map_round_trip() {
        let b = ParameterBounds::reference();
        let theta = ParameterSet::trf_optimum();
        let z = b.set_to_unit(&theta);
        let back = b.set_from_unit(&z);
        for p in Param::ALL {
            assert_relative_eq!(back.get(p), theta.get(p), max_relative = 1e-12);
            assert!((0.0..=1.0).contains(&z[p.index()]));
        }
    }

    #[test]
    fn parameter_vector_enforces_bounds() {
        let b = ParameterBounds::reference();
        assert!(ParameterVector::new(ParameterSet::initial_guess(), b).is_ok());
        let mut bad = ParameterSet::initial_guess();
        bad.set(Param::Resistance, 100e6);
        assert!(ParameterVector::new(bad, b).is_err());
    }

    #[test]
    fn circuit_and_damping_validation() {
        assert!(CircuitParams::new(0.0, 1e-9).is_err());
        assert!(CircuitParams::new(1e6, -1e-9).is_err());
        assert!(RayleighDamping::new(-0.1, 0.0).is_err());
        assert!(BeamGeometry::new(0.1, 0.0, 0.001).is_err());
    }
}
