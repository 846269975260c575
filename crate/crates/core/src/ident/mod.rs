//! Fitting θ = [α, β, E, R, C] to velocity and voltage records.
//!
//! The objective is
//!
//! ```text
//! F = ½ Σ ((v̂(tᵢ) − v(tᵢ)) / s_v)² + ½ Σ ((V̂(tᵢ) − V(tᵢ)) / s_V)²
//! ```
//!
//! with simulated series linearly interpolated to the measurement times.
//! Two optimizers are provided: a bounded Levenberg–Marquardt
//! ([`identify_lsq`], with the two-stage [`identify_sequential`] protocol)
//! and CMA-ES ([`identify_cmaes`]). Both work in the unit box given by
//! [`ParameterBounds::to_unit`] (log scale for E, R, C).

mod cmaes;
mod lsq;

pub use cmaes::{identify_cmaes, CmaesOptions};
pub use lsq::{identify_lsq, identify_sequential, JacobianMode, LsqOptions, SequentialResult};

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fem::ReducedSystem;
use crate::io::{read_csv, write_csv};
use crate::model::{Param, ParameterBounds, ParameterSet};
use crate::sensitivity::{run_with_sensitivities, SensitivityOptions, SensitivityRecord};
use crate::signal::bracket;
use crate::solve::{preload, TimeGrid, TransientStepper};

pub const MEASUREMENT_HEADER: [&str; 3] = ["t", "vz", "V"];

/// Measured velocity and voltage with their normalization constants.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    times: Vec<f64>,
    vz: Vec<f64>,
    voltage: Vec<f64>,
    scale_vz: f64,
    scale_voltage: f64,
}

impl MeasurementSet {
    /// Scales default to the largest magnitude of each channel.
    pub fn new(times: Vec<f64>, vz: Vec<f64>, voltage: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Empty("measurement set".into()));
        }
        if vz.len() != times.len() || voltage.len() != times.len() {
            return Err(Error::Dimension(format!(
                "{} times, {} velocities, {} voltages",
                times.len(),
                vz.len(),
                voltage.len()
            )));
        }
        if times.iter().chain(&vz).chain(&voltage).any(|v| !v.is_finite()) {
            return Err(Error::invalid("measurements", "non-finite value"));
        }
        if times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("times", "must be non-negative and strictly increasing"));
        }
        let mut m = Self {
            times,
            vz,
            voltage,
            scale_vz: 1.0,
            scale_voltage: 1.0,
        };
        m.rescale();
        Ok(m)
    }

    fn rescale(&mut self) {
        let amax = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        self.scale_vz = amax(&self.vz);
        self.scale_voltage = amax(&self.voltage);
    }

    /// Override the normalization constants.
    pub fn with_scales(mut self, scale_vz: f64, scale_voltage: f64) -> Result<Self> {
        if !(scale_vz > 0.0 && scale_voltage > 0.0) {
            return Err(Error::invalid("scales", "must be positive"));
        }
        self.scale_vz = scale_vz;
        self.scale_voltage = scale_voltage;
        Ok(self)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut cols = read_csv(path.as_ref(), &MEASUREMENT_HEADER)?;
        let voltage = cols.pop().unwrap_or_default();
        let vz = cols.pop().unwrap_or_default();
        let times = cols.pop().unwrap_or_default();
        Self::new(times, vz, voltage)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path.as_ref(), &MEASUREMENT_HEADER, &[&self.times, &self.vz, &self.voltage])
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn vz(&self) -> &[f64] {
        &self.vz
    }

    pub fn voltage(&self) -> &[f64] {
        &self.voltage
    }

    pub fn scale_vz(&self) -> f64 {
        self.scale_vz
    }

    pub fn scale_voltage(&self) -> f64 {
        self.scale_voltage
    }

    /// Every `stride`-th sample, starting with the first; scales are
    /// recomputed on the subset.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("stride", "must be at least 1"));
        }
        self.select(|i, _| i % stride == 0)
    }

    /// Samples with `start ≤ t ≤ end`; scales are recomputed on the subset.
    pub fn window(&self, start: f64, end: f64) -> Result<Self> {
        self.select(|_, t| t >= start && t <= end)
    }

    fn select(&self, keep: impl Fn(usize, f64) -> bool) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i, self.times[i])).collect();
        if idx.is_empty() {
            return Err(Error::Empty("no samples selected".into()));
        }
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let mut m = Self {
            times: pick(&self.times),
            vz: pick(&self.vz),
            voltage: pick(&self.voltage),
            scale_vz: 1.0,
            scale_voltage: 1.0,
        };
        m.rescale();
        Ok(m)
    }

    /// Scale both channels, e.g. to change units.
    pub fn scaled(&self, factor_vz: f64, factor_voltage: f64) -> Result<Self> {
        Self::new(
            self.times.clone(),
            self.vz.iter().map(|v| v * factor_vz).collect(),
            self.voltage.iter().map(|v| v * factor_voltage).collect(),
        )
    }
}

/// Which residual block enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResidualSelector {
    Velocity,
    Voltage,
    Both,
}

impl ResidualSelector {
    /// Residual weights `(1/s_v, 1/s_V)`. A single block is left unscaled,
    /// which does not move its minimizer.
    pub fn weights(self, meas: &MeasurementSet) -> (f64, f64) {
        match self {
            ResidualSelector::Velocity => (1.0, 0.0),
            ResidualSelector::Voltage => (0.0, 1.0),
            ResidualSelector::Both => (1.0 / meas.scale_vz, 1.0 / meas.scale_voltage),
        }
    }
}

/// Objective value split into its two blocks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveValue {
    pub total: f64,
    pub velocity: f64,
    pub voltage: f64,
}

impl ObjectiveValue {
    fn infinite() -> Self {
        Self {
            total: f64::INFINITY,
            velocity: f64::INFINITY,
            voltage: f64::INFINITY,
        }
    }
}

/// Simulated observables on the time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub times: Vec<f64>,
    pub vz: Vec<f64>,
    pub voltage: Vec<f64>,
}

/// Forward model of the release experiment: static preload under the tip
/// force, then free response on a fixed time grid.
#[derive(Debug, Clone, Copy)]
pub struct ForwardModel<'a> {
    sys: &'a ReducedSystem,
    grid: TimeGrid,
}

impl<'a> ForwardModel<'a> {
    pub fn new(sys: &'a ReducedSystem, grid: TimeGrid) -> Result<Self> {
        grid.validate()?;
        if sys.laser_dof.is_none() {
            return Err(Error::invalid("mesh", "the laser point is not a free DOF"));
        }
        Ok(Self { sys, grid })
    }

    pub fn system(&self) -> &'a ReducedSystem {
        self.sys
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn simulate(&self, theta: &ParameterSet) -> Result<Simulation> {
        let pre = preload(self.sys, theta.young_modulus())?;
        let stepper = TransientStepper::new(self.sys, self.grid, *theta)?;
        let laser = self.sys.laser_dof.unwrap_or(0);
        let n = self.grid.n_steps + 1;
        let mut sim = Simulation {
            times: Vec::with_capacity(n),
            vz: Vec::with_capacity(n),
            voltage: Vec::with_capacity(n),
        };
        let mut s = pre.state;
        for k in 0..n {
            if k > 0 {
                s = stepper.step(&s, k)?;
            }
            sim.times.push(s.time);
            sim.vz.push(s.u_dot[laser]);
            sim.voltage.push(s.p_bar);
        }
        Ok(sim)
    }

    pub fn simulate_with_sensitivities(&self, theta: &ParameterSet) -> Result<SensitivityRecord> {
        let pre = preload(self.sys, theta.young_modulus())?;
        run_with_sensitivities(self.sys, &self.grid, &pre, theta, &SensitivityOptions::default())
    }

    fn check_covers(&self, meas: &MeasurementSet) -> Result<()> {
        let last = meas.times.last().copied().unwrap_or(0.0);
        if last > self.grid.horizon() * (1.0 + 1e-9) {
            return Err(Error::invalid(
                "horizon",
                format!("simulation ends at {:e} s, measurements at {last:e} s", self.grid.horizon()),
            ));
        }
        Ok(())
    }
}

fn interpolate_at(times: &[f64], values: &[f64], at: &[f64]) -> Result<Vec<f64>> {
    at.iter()
        .map(|&t| {
            let (i, w) = bracket(times, t)?;
            Ok(if w == 0.0 { values[i] } else { (1.0 - w) * values[i] + w * values[i + 1] })
        })
        .collect()
}

fn residual_blocks(sim_vz: &[f64], sim_v: &[f64], meas: &MeasurementSet, w: (f64, f64)) -> (Vec<f64>, ObjectiveValue) {
    let n = meas.len();
    let mut r = Vec::with_capacity(2 * n);
    r.extend((0..n).map(|i| w.0 * (sim_vz[i] - meas.vz[i])));
    r.extend((0..n).map(|i| w.1 * (sim_v[i] - meas.voltage[i])));
    let velocity = 0.5 * r[..n].iter().map(|x| x * x).sum::<f64>();
    let voltage = 0.5 * r[n..].iter().map(|x| x * x).sum::<f64>();
    (
        r,
        ObjectiveValue {
            total: velocity + voltage,
            velocity,
            voltage,
        },
    )
}

/// Full objective with both blocks normalized by the measurement scales.
pub fn objective(model: &ForwardModel<'_>, theta: &ParameterSet, meas: &MeasurementSet) -> Result<ObjectiveValue> {
    objective_with(model, theta, meas, ResidualSelector::Both)
}

pub fn objective_with(
    model: &ForwardModel<'_>,
    theta: &ParameterSet,
    meas: &MeasurementSet,
    selector: ResidualSelector,
) -> Result<ObjectiveValue> {
    Ok(residuals(model, theta, meas, selector)?.1)
}

/// Stacked residual `[w_v (v̂ − v); w_V (V̂ − V)]` of length `2 N_m`.
pub fn residuals(
    model: &ForwardModel<'_>,
    theta: &ParameterSet,
    meas: &MeasurementSet,
    selector: ResidualSelector,
) -> Result<(Vec<f64>, ObjectiveValue)> {
    model.check_covers(meas)?;
    let sim = model.simulate(theta)?;
    let vz = interpolate_at(&sim.times, &sim.vz, &meas.times)?;
    let v = interpolate_at(&sim.times, &sim.voltage, &meas.times)?;
    Ok(residual_blocks(&vz, &v, meas, selector.weights(meas)))
}

/// Residuals and their `2 N_m × 5` Jacobian with respect to θ in physical
/// units, from one transient run with sensitivities.
pub fn residuals_and_jacobian(
    model: &ForwardModel<'_>,
    theta: &ParameterSet,
    meas: &MeasurementSet,
    selector: ResidualSelector,
) -> Result<(Vec<f64>, DMatrix<f64>, ObjectiveValue)> {
    model.check_covers(meas)?;
    let rec = model.simulate_with_sensitivities(theta)?;
    let w = selector.weights(meas);
    let vz = interpolate_at(&rec.times, &rec.vz, &meas.times)?;
    let v = interpolate_at(&rec.times, &rec.voltage, &meas.times)?;
    let (r, f) = residual_blocks(&vz, &v, meas, w);
    let jac = output_jacobian(&rec, &meas.times, w)?;
    Ok((r, jac, f))
}

/// Sensitivities of both observables interpolated to `times`, stacked as
/// `[w_v ∂v̂/∂θ; w_V ∂V̂/∂θ]`.
pub fn output_jacobian(rec: &SensitivityRecord, times: &[f64], w: (f64, f64)) -> Result<DMatrix<f64>> {
    let n = times.len();
    let mut jac = DMatrix::zeros(2 * n, Param::COUNT);
    for k in 0..Param::COUNT {
        let dv = interpolate_at(&rec.times, &rec.d_vz[k], times)?;
        let du = interpolate_at(&rec.times, &rec.d_voltage[k], times)?;
        for i in 0..n {
            jac[(i, k)] = w.0 * dv[i];
            jac[(n + i, k)] = w.1 * du[i];
        }
    }
    Ok(jac)
}

/// One row of an optimizer history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub theta: ParameterSet,
    pub objective: f64,
}

/// Outcome of an identification run.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentResult {
    pub theta: ParameterSet,
    /// Objective at `theta` under the weights of the run.
    pub objective: ObjectiveValue,
    /// Accepted iterates (LSQ) or best-so-far per generation (CMA-ES).
    pub history: Vec<HistoryEntry>,
    /// Forward-model runs, including those made for Jacobians.
    pub evaluations: usize,
    pub jacobian_evaluations: usize,
    pub failed_evaluations: usize,
    pub iterations: usize,
    pub termination: String,
}

/// Synthetic measurements at θ on the samples `times`, with zero-mean
/// Gaussian noise of standard deviation `noise_level × max|channel|`.
pub fn synthesize(
    model: &ForwardModel<'_>,
    theta: &ParameterSet,
    times: &[f64],
    noise_level: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if !(noise_level >= 0.0) {
        return Err(Error::invalid("noise", "must be non-negative"));
    }
    let sim = model.simulate(theta)?;
    let mut vz = interpolate_at(&sim.times, &sim.vz, times)?;
    let mut v = interpolate_at(&sim.times, &sim.voltage, times)?;
    if noise_level > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for ch in [&mut vz, &mut v] {
            let amp = ch.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let normal = Normal::new(0.0, noise_level * amp).map_err(|e| Error::invalid("noise", e.to_string()))?;
            ch.iter_mut().for_each(|x| *x += normal.sample(&mut rng));
        }
    }
    MeasurementSet::new(times.to_vec(), vz, v)
}

/// Check that θ₀ lies in the box.
pub(crate) fn check_start(theta0: &ParameterSet, bounds: &ParameterBounds) -> Result<()> {
    crate::model::ParameterVector::new(*theta0, *bounds).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, AssemblyOptions, Materials};
    use crate::mesh::{generate_assembly_mesh, AssemblyGeometry, MeshResolution};

    pub(crate) fn small_system() -> ReducedSystem {
        let geom = AssemblyGeometry {
            disc_polygon_sides: 8,
            ..Default::default()
        };
        let res = MeshResolution {
            length_cells: 6,
            ..MeshResolution::coarse()
        };
        let mesh = generate_assembly_mesh(&geom, &res, 2).unwrap();
        assemble(&mesh, &Materials::default(), &AssemblyOptions::default()).unwrap().reduce()
    }

    fn meas() -> MeasurementSet {
        MeasurementSet::new(vec![0.0, 0.1, 0.2, 0.3], vec![1.0, -2.0, 0.5, 0.0], vec![0.1, 0.3, -0.2, 0.0]).unwrap()
    }

    #[test]
    fn scales_and_subsets() {
        let m = meas();
        assert_eq!((m.scale_vz(), m.scale_voltage()), (2.0, 0.3));
        assert_eq!(m.subsample(1).unwrap(), m);
        let s = m.subsample(2).unwrap();
        assert_eq!(s.times(), &[0.0, 0.2]);
        assert!(s.scale_vz() <= m.scale_vz() && s.scale_voltage() <= m.scale_voltage());
        assert_eq!(m.window(0.05, 0.25).unwrap().len(), 2);
        assert!(m.window(1.0, 2.0).is_err());
        assert!(m.subsample(0).is_err());
        let long = MeasurementSet::new((0..2500).map(|i| i as f64).collect(), vec![1.0; 2500], vec![1.0; 2500]).unwrap();
        assert_eq!(long.subsample(10).unwrap().len(), 250);
    }

    #[test]
    fn rejects_bad_times() {
        assert!(MeasurementSet::new(vec![0.0, 0.0], vec![1.0; 2], vec![1.0; 2]).is_err());
        assert!(MeasurementSet::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = meas();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        m.write_csv(&p).unwrap();
        assert_eq!(MeasurementSet::read_csv(&p).unwrap(), m);
    }

    #[test]
    fn objective_properties() {
        let sys = small_system();
        let model = ForwardModel::new(&sys, TimeGrid::new(2e-4, 50).unwrap()).unwrap();
        let theta = ParameterSet::trf_optimum();
        let times: Vec<f64> = (0..=25).map(|i| i as f64 * 4e-4).collect();
        let data = synthesize(&model, &theta, &times, 0.0, 1).unwrap();
        assert!(objective(&model, &theta, &data).unwrap().total <= 1e-12);

        let other = ParameterSet::initial_guess();
        let f = objective(&model, &other, &data).unwrap();
        assert!(f.total > 0.0 && (f.total - f.velocity - f.voltage).abs() <= 1e-14 * f.total);
        // Same scaling of data and model leaves F unchanged: scale the data
        // and compare the voltage block of a scaled residual by hand.
        let (r, _) = residuals(&model, &other, &data, ResidualSelector::Both).unwrap();
        let scaled = data.scaled(3.0, 7.0).unwrap();
        assert_eq!(scaled.scale_vz(), 3.0 * data.scale_vz());
        let n = data.len();
        let sim = model.simulate(&other).unwrap();
        let vz = interpolate_at(&sim.times, &sim.vz, data.times()).unwrap();
        let v = interpolate_at(&sim.times, &sim.voltage, data.times()).unwrap();
        let vz3: Vec<f64> = vz.iter().map(|x| 3.0 * x).collect();
        let v7: Vec<f64> = v.iter().map(|x| 7.0 * x).collect();
        let (r2, f2) = residual_blocks(&vz3, &v7, &scaled, ResidualSelector::Both.weights(&scaled));
        assert!((f2.total - f.total).abs() <= 1e-12 * f.total);
        assert!((r2[n] - r[n]).abs() <= 1e-12 * r[n].abs().max(1e-30));

        let (r, jac, fj) = residuals_and_jacobian(&model, &other, &data, ResidualSelector::Both).unwrap();
        assert_eq!(jac.nrows(), 2 * n);
        assert!((0.5 * r.iter().map(|x| x * x).sum::<f64>() - f.total).abs() <= 1e-12 * f.total);
        assert!((fj.total - f.total).abs() <= 1e-9 * f.total);
        // Damping reaches the voltage through the motion.
        assert!((n..2 * n).any(|i| jac[(i, Param::Alpha.index())] != 0.0));
        let fv = objective_with(&model, &other, &data, ResidualSelector::Velocity).unwrap();
        assert_eq!(fv.voltage, 0.0);
    }

    #[test]
    fn jacobian_gradient_matches_finite_differences() {
        let sys = small_system();
        let model = ForwardModel::new(&sys, TimeGrid::new(2e-4, 50).unwrap()).unwrap();
        let times: Vec<f64> = (0..=25).map(|i| i as f64 * 4e-4).collect();
        let data = synthesize(&model, &ParameterSet::trf_optimum(), &times, 0.0, 1).unwrap();
        let theta = ParameterSet::initial_guess();
        let (r, jac, _) = residuals_and_jacobian(&model, &theta, &data, ResidualSelector::Both).unwrap();
        let g = jac.transpose() * DMatrix::from_column_slice(r.len(), 1, &r);
        // Compare in unit coordinates, where the components are commensurate.
        let bounds = ParameterBounds::reference();
        let z = bounds.set_to_unit(&theta);
        let h = 1e-3;
        let mut diff = 0.0;
        let mut norm = 0.0;
        for p in Param::ALL {
            let k = p.index();
            let f = |s: f64| {
                let mut zz = z;
                zz[k] += s * h;
                objective(&model, &bounds.set_from_unit(&zz), &data).unwrap().total
            };
            let fd = (-f(2.0) + 8.0 * f(1.0) - 8.0 * f(-1.0) + f(-2.0)) / (12.0 * h);
            let gk = g[(k, 0)] * bounds.unit_derivative(p, z[k]);
            diff += (gk - fd).powi(2);
            norm += gk * gk;
        }
        assert!(diff.sqrt() <= 1e-3 * norm.sqrt(), "{:e}", diff.sqrt() / norm.sqrt());
    }

    #[test]
    fn synthetic_noise_statistics() {
        let sys = small_system();
        let model = ForwardModel::new(&sys, TimeGrid::new(2e-4, 250).unwrap()).unwrap();
        let times: Vec<f64> = (0..=250).map(|i| i as f64 * 2e-4).collect();
        let theta = ParameterSet::trf_optimum();
        let clean = synthesize(&model, &theta, &times, 0.0, 0).unwrap();
        let noisy = synthesize(&model, &theta, &times, 0.01, 42).unwrap();
        assert_eq!(noisy, synthesize(&model, &theta, &times, 0.01, 42).unwrap());
        for (a, b, amp) in [
            (clean.vz(), noisy.vz(), clean.scale_vz()),
            (clean.voltage(), noisy.voltage(), clean.scale_voltage()),
        ] {
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
            assert!((sd / (0.01 * amp) - 1.0).abs() < 0.2, "{sd} vs {}", 0.01 * amp);
        }
    }
}
