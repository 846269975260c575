//! JSON run configuration. Every field has a default, so `{}` is a valid
//! configuration describing the reference experiment.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix6};
use piezobeam::fem::{AssemblyOptions, Materials};
use piezobeam::ident::{CmaesOptions, JacobianMode, LsqOptions};
use piezobeam::mesh::{AssemblyGeometry, MeshResolution};
use piezobeam::model::{
    BeamGeometry, ElasticMaterial, Matrix3x6, ParameterBounds, ParameterSet, ParameterVector, PiezoMaterial, GRAVITY,
    VACUUM_PERMITTIVITY,
};
use piezobeam::solve::TimeGrid;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub geometry: GeometryConfig,
    pub materials: MaterialsConfig,
    pub damping: DampingConfig,
    pub circuit: CircuitConfig,
    pub mesh: MeshConfig,
    pub time: TimeConfig,
    /// Electrode penalty factor γ; the facet weight is `γ ε₃₃ / h`.
    pub nitsche_gamma: f64,
    pub load: LoadConfig,
    pub modal: ModalConfig,
    pub synthesis: SynthesisConfig,
    pub identification: IdentificationConfig,
    pub seed: u64,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let theta = ParameterSet::trf_optimum();
        Self {
            version: SCHEMA_VERSION,
            geometry: GeometryConfig::default(),
            materials: MaterialsConfig::default(),
            damping: DampingConfig {
                alpha: theta.damping().alpha,
                beta: theta.damping().beta,
            },
            circuit: CircuitConfig {
                resistance: theta.circuit().resistance,
                capacitance: theta.circuit().capacitance,
            },
            mesh: MeshConfig::default(),
            time: TimeConfig::default(),
            nitsche_gamma: AssemblyOptions::default().nitsche_factor,
            load: LoadConfig::default(),
            modal: ModalConfig::default(),
            synthesis: SynthesisConfig::default(),
            identification: IdentificationConfig::default(),
            seed: 0,
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub beam_length: f64,
    pub beam_width: f64,
    pub beam_thickness: f64,
    pub clamped_overhang: f64,
    pub disc_radius: f64,
    pub disc_thickness: f64,
    pub disc_center_x: f64,
    pub laser_point_x: f64,
    pub weight_point_x: f64,
    pub disc_polygon_sides: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = AssemblyGeometry::default();
        Self {
            beam_length: g.beam.active_length,
            beam_width: g.beam.width,
            beam_thickness: g.beam.thickness,
            clamped_overhang: g.clamped_overhang,
            disc_radius: g.disc_radius,
            disc_thickness: g.disc_thickness,
            disc_center_x: g.disc_center_x,
            laser_point_x: g.laser_point_x,
            weight_point_x: g.weight_point_x,
            disc_polygon_sides: g.disc_polygon_sides,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticConfig {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
}

impl Default for ElasticConfig {
    fn default() -> Self {
        let m = ElasticMaterial::beam_steel();
        Self {
            young_modulus: m.young_modulus,
            poisson_ratio: m.poisson_ratio,
            density: m.density,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiezoConfig {
    /// Stiffness at constant field in Voigt order, Pa.
    pub stiffness: [[f64; 6]; 6],
    /// Stress coefficients `e`, C/m².
    pub coupling: [[f64; 6]; 3],
    /// Permittivity relative to ε₀.
    pub relative_permittivity: [[f64; 3]; 3],
    pub density: f64,
}

impl Default for PiezoConfig {
    fn default() -> Self {
        let m = PiezoMaterial::pic181();
        let rel = m.permittivity / VACUUM_PERMITTIVITY;
        Self {
            stiffness: std::array::from_fn(|i| std::array::from_fn(|j| m.stiffness_voigt[(i, j)])),
            coupling: std::array::from_fn(|i| std::array::from_fn(|j| m.coupling_voigt[(i, j)])),
            relative_permittivity: std::array::from_fn(|i| std::array::from_fn(|j| rel[(i, j)])),
            density: m.density,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialsConfig {
    pub beam: ElasticConfig,
    pub piezo: PiezoConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DampingConfig {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitConfig {
    pub resistance: f64,
    pub capacitance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Element order, 1 or 2.
    pub order: u8,
    pub length_cells: usize,
    pub thickness_layers: usize,
    pub disc_layers: usize,
    pub disc_rings: usize,
    pub annulus_layers: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        let r = MeshResolution::default();
        Self {
            order: 2,
            length_cells: r.length_cells,
            thickness_layers: r.thickness_layers,
            disc_layers: r.disc_layers,
            disc_rings: r.disc_rings,
            annulus_layers: r.annulus_layers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub newmark_beta: f64,
    pub newmark_gamma: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        let g = TimeGrid::default();
        Self {
            dt: g.dt,
            n_steps: g.n_steps,
            newmark_beta: g.newmark_beta,
            newmark_gamma: g.newmark_gamma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadConfig {
    /// Downward force at the weight point, N.
    pub tip_force: f64,
    pub gravity: bool,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            tip_force: AssemblyOptions::default().tip_force,
            gravity: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// Beam with the bonded disc.
    Assembly,
    /// Bare beam.
    Beam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModalConfig {
    pub n_modes: usize,
    pub structure: Structure,
    /// Condense the potential (electrodes grounded) instead of treating the
    /// disc as a purely elastic body.
    pub include_piezo: bool,
}

impl Default for ModalConfig {
    fn default() -> Self {
        Self {
            n_modes: 6,
            structure: Structure::Assembly,
            include_piezo: true,
        }
    }
}

/// θ in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterValues {
    pub alpha: f64,
    pub beta: f64,
    pub young_modulus: f64,
    pub resistance: f64,
    pub capacitance: f64,
}

impl From<ParameterSet> for ParameterValues {
    fn from(t: ParameterSet) -> Self {
        let [alpha, beta, young_modulus, resistance, capacitance] = t.0;
        Self {
            alpha,
            beta,
            young_modulus,
            resistance,
            capacitance,
        }
    }
}

impl From<ParameterValues> for ParameterSet {
    fn from(v: ParameterValues) -> Self {
        ParameterSet::new(v.alpha, v.beta, v.young_modulus, v.resistance, v.capacitance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub truth: ParameterValues,
    /// Noise standard deviation relative to each channel's peak.
    pub noise_level: f64,
    /// Keep every `stride`-th time level.
    pub stride: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            truth: ParameterSet::trf_optimum().into(),
            noise_level: 0.0,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Sequential,
    Cmaes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianConfig {
    Sensitivity,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub lower: ParameterValues,
    pub upper: ParameterValues,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsqConfig {
    pub max_iterations: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub jacobian: JacobianConfig,
    pub fd_step: f64,
}

impl Default for LsqConfig {
    fn default() -> Self {
        let o = LsqOptions::default();
        Self {
            max_iterations: o.max_iterations,
            ftol: o.ftol,
            xtol: o.xtol,
            jacobian: JacobianConfig::Sensitivity,
            fd_step: o.fd_step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaesConfig {
    pub population: usize,
    pub generations: usize,
    pub sigma0: f64,
    pub penalty: f64,
}

impl Default for CmaesConfig {
    fn default() -> Self {
        let o = CmaesOptions::default();
        Self {
            population: o.population,
            generations: o.generations,
            sigma0: o.sigma0,
            penalty: o.penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentificationConfig {
    pub initial: ParameterValues,
    pub bounds: BoundsConfig,
    pub strategy: Strategy,
    /// Mechanical/electrical passes of the sequential strategy.
    pub passes: usize,
    pub lsq: LsqConfig,
    pub cmaes: CmaesConfig,
    /// Decimation applied to the measurements before fitting.
    pub stride: usize,
    /// Optional `[start, end]` time window, s.
    pub window: Option<[f64; 2]>,
    /// Measurement CSV; the `identify` command also takes it as an argument.
    pub measurements: Option<PathBuf>,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        let b = ParameterBounds::reference();
        Self {
            initial: ParameterSet::initial_guess().into(),
            bounds: BoundsConfig {
                lower: b.lower.into(),
                upper: b.upper.into(),
            },
            strategy: Strategy::Sequential,
            passes: 2,
            lsq: LsqConfig::default(),
            cmaes: CmaesConfig::default(),
            stride: 1,
            window: None,
            measurements: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical (compact) serialization, ignoring where
    /// outputs go.
    pub fn hash(&self) -> String {
        let mut cfg = self.clone();
        cfg.output = OutputConfig::default();
        let canonical = serde_json::to_string(&cfg).expect("configuration serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Check everything that can be checked without solving.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        self.assembly_geometry()?;
        self.materials()?;
        self.resolution()?;
        self.grid()?;
        self.assembly_options()?;
        piezobeam::model::RayleighDamping::new(self.damping.alpha, self.damping.beta).map_err(config)?;
        piezobeam::model::CircuitParams::new(self.circuit.resistance, self.circuit.capacitance).map_err(config)?;
        if !matches!(self.mesh.order, 1 | 2) {
            return Err(CliError::Config(format!("mesh.order must be 1 or 2, got {}", self.mesh.order)));
        }
        if self.modal.n_modes == 0 {
            return Err(CliError::Config("modal.n_modes must be at least 1".into()));
        }
        let s = &self.synthesis;
        if !(s.noise_level >= 0.0) || s.stride == 0 {
            return Err(CliError::Config("synthesis: noise_level ≥ 0 and stride ≥ 1 required".into()));
        }
        let id = &self.identification;
        let bounds = self.bounds()?;
        ParameterVector::new(id.initial.into(), bounds).map_err(|e| CliError::Config(format!("identification.initial: {e}")))?;
        if id.stride == 0 || id.passes == 0 {
            return Err(CliError::Config("identification: stride and passes must be at least 1".into()));
        }
        if let Some([a, b]) = id.window {
            if !(a >= 0.0 && b > a) {
                return Err(CliError::Config(format!("identification.window [{a}, {b}] is empty")));
            }
        }
        let l = &id.lsq;
        if l.max_iterations == 0 || !(l.ftol >= 0.0 && l.xtol >= 0.0 && l.fd_step > 0.0) {
            return Err(CliError::Config("identification.lsq: invalid tolerances".into()));
        }
        let c = &id.cmaes;
        if c.population < 4 || c.generations == 0 || !(c.sigma0 > 0.0) || !(c.penalty >= 0.0) {
            return Err(CliError::Config(
                "identification.cmaes: population ≥ 4, generations ≥ 1, sigma0 > 0, penalty ≥ 0 required".into(),
            ));
        }
        Ok(())
    }

    pub fn assembly_geometry(&self) -> Result<AssemblyGeometry, CliError> {
        let g = &self.geometry;
        let geom = AssemblyGeometry {
            beam: BeamGeometry::new(g.beam_length, g.beam_width, g.beam_thickness).map_err(config)?,
            clamped_overhang: g.clamped_overhang,
            disc_radius: g.disc_radius,
            disc_thickness: g.disc_thickness,
            disc_center_x: g.disc_center_x,
            laser_point_x: g.laser_point_x,
            weight_point_x: g.weight_point_x,
            disc_polygon_sides: g.disc_polygon_sides,
        };
        geom.validate().map_err(config)?;
        Ok(geom)
    }

    pub fn materials(&self) -> Result<Materials, CliError> {
        let b = &self.materials.beam;
        let p = &self.materials.piezo;
        let beam = ElasticMaterial::new(b.young_modulus, b.poisson_ratio, b.density).map_err(config)?;
        let piezo = PiezoMaterial::new(
            Matrix6::from_fn(|i, j| p.stiffness[i][j]),
            Matrix3x6::from_fn(|i, j| p.coupling[i][j]),
            Matrix3::from_fn(|i, j| p.relative_permittivity[i][j]),
            p.density,
        )
        .map_err(config)?;
        Ok(Materials { beam, piezo })
    }

    pub fn resolution(&self) -> Result<MeshResolution, CliError> {
        let m = &self.mesh;
        let r = MeshResolution {
            length_cells: m.length_cells,
            thickness_layers: m.thickness_layers,
            disc_layers: m.disc_layers,
            disc_rings: m.disc_rings,
            annulus_layers: m.annulus_layers,
        };
        r.validate().map_err(config)?;
        Ok(r)
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        let t = &self.time;
        let g = TimeGrid {
            dt: t.dt,
            n_steps: t.n_steps,
            newmark_beta: t.newmark_beta,
            newmark_gamma: t.newmark_gamma,
        };
        g.validate().map_err(config)?;
        Ok(g)
    }

    pub fn assembly_options(&self) -> Result<AssemblyOptions, CliError> {
        let o = AssemblyOptions {
            nitsche_factor: self.nitsche_gamma,
            gravity: if self.load.gravity { GRAVITY } else { 0.0 },
            tip_force: self.load.tip_force,
        };
        o.validate().map_err(config)?;
        Ok(o)
    }

    /// θ of forward runs: damping, beam modulus and circuit of this config.
    pub fn theta(&self) -> ParameterSet {
        ParameterSet::new(
            self.damping.alpha,
            self.damping.beta,
            self.materials.beam.young_modulus,
            self.circuit.resistance,
            self.circuit.capacitance,
        )
    }

    pub fn bounds(&self) -> Result<ParameterBounds, CliError> {
        let b = &self.identification.bounds;
        ParameterBounds::new(b.lower.into(), b.upper.into()).map_err(config)
    }

    pub fn lsq_options(&self) -> LsqOptions {
        let l = &self.identification.lsq;
        LsqOptions {
            max_iterations: l.max_iterations,
            ftol: l.ftol,
            xtol: l.xtol,
            jacobian: match l.jacobian {
                JacobianConfig::Sensitivity => JacobianMode::Sensitivity,
                JacobianConfig::FiniteDifference => JacobianMode::FiniteDifference,
            },
            fd_step: l.fd_step,
        }
    }

    pub fn cmaes_options(&self) -> CmaesOptions {
        let c = &self.identification.cmaes;
        CmaesOptions {
            population: c.population,
            generations: c.generations,
            sigma0: c.sigma0,
            seed: self.seed,
            penalty: c.penalty,
        }
    }
}

fn config(e: piezobeam::Error) -> CliError {
    CliError::Config(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let mut trf = ParameterSet::trf_optimum();
        trf.set(piezobeam::model::Param::YoungModulus, ElasticMaterial::beam_steel().young_modulus);
        assert_eq!(cfg.theta(), trf);
        assert_eq!(cfg.materials().unwrap(), Materials::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"geometry": {"beam_lenght": 0.1}}"#).unwrap_err();
        assert!(matches!(err, CliError::Config(ref m) if m.contains("beam_lenght")), "{err}");
    }

    #[test]
    fn initial_guess_outside_bounds() {
        let mut cfg = RunConfig::default();
        cfg.identification.initial.alpha = 20.0;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output.dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
