//! Forward (direct-differentiation) sensitivities of the transient response
//! with respect to θ = [α, β, E, R, C].
//!
//! Each step of the direct solve is a linear system `S x = r(θ, yⁿ⁻¹)` with
//! `x = [üⁿ, pⁿ, p̄ⁿ]`. Differentiating gives
//!
//! ```text
//! S ∂x/∂θ = (∂r/∂yⁿ⁻¹) ∂yⁿ⁻¹/∂θ − ∂Φ/∂θ
//! ```
//!
//! where `Φ = S x − r` is the step residual. The right-hand sides for all
//! five parameters are solved together against the factorization of `S`
//! already held by the [`TransientStepper`].

use std::path::Path;

use crate::error::{Error, Result};
use crate::fem::ReducedSystem;
use crate::io::write_csv;
use crate::model::{Param, ParameterSet};
use crate::solve::{Preload, StateVector, TimeGrid, TransientStepper};
use crate::sparse::{norm2, CsrMatrix};

/// Sensitivities `∂y/∂θ_k` at one time level, one [`StateVector`] per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBlock {
    pub time: f64,
    /// Indexed by [`Param::index`].
    pub columns: Vec<StateVector>,
}

impl SensitivityBlock {
    pub fn zeros(sys: &ReducedSystem) -> Self {
        Self {
            time: 0.0,
            columns: vec![StateVector::for_system(sys); Param::COUNT],
        }
    }

    pub fn column(&self, p: Param) -> &StateVector {
        &self.columns[p.index()]
    }
}

/// Explicit derivatives of the step residual with respect to θ.
///
/// The beam stiffness is `K = (E/E_ref) K_beam + K_piezo`, damping is
/// `αM + βK`. Only the beam block depends on E.
#[derive(Debug)]
pub struct ParameterPartials<'a> {
    sys: &'a ReducedSystem,
    theta: ParameterSet,
    stiffness: &'a CsrMatrix,
}

impl<'a> ParameterPartials<'a> {
    /// `stiffness` must equal `sys.stiffness(theta.young_modulus())`.
    pub fn new(sys: &'a ReducedSystem, theta: ParameterSet, stiffness: &'a CsrMatrix) -> Self {
        Self { sys, theta, stiffness }
    }

    /// `(∂K/∂E) u = K_beam u / E_ref`.
    pub fn stiffness_e(&self, u: &[f64]) -> Vec<f64> {
        let mut out = self.sys.stiffness_beam.mul_vec(u);
        let s = 1.0 / self.sys.reference_modulus;
        out.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `(∂C_damp/∂θ_p) v`; zero for R and C.
    pub fn damping(&self, p: Param, v: &[f64]) -> Vec<f64> {
        match p {
            Param::Alpha => self.sys.mass.mul_vec(v),
            Param::Beta => self.stiffness.mul_vec(v),
            Param::YoungModulus => {
                let mut out = self.stiffness_e(v);
                let beta = self.theta.damping().beta;
                out.iter_mut().for_each(|x| *x *= beta);
                out
            }
            Param::Resistance | Param::Capacitance => vec![0.0; v.len()],
        }
    }

    /// Derivative of the circuit row between levels `n − 1` and `n`.
    pub fn circuit(&self, p: Param, pbar_new: f64, pbar_prev: f64, dt: f64) -> f64 {
        let r = self.theta.circuit().resistance;
        match p {
            Param::Resistance => -(pbar_new + pbar_prev) / (2.0 * r * r),
            Param::Capacitance => (pbar_new - pbar_prev) / dt,
            _ => 0.0,
        }
    }

    /// Full `∂Φⁿ/∂θ_p` for the step from `prev` to `next`, laid out like
    /// the step unknowns `[ü, p, p̄]`.
    pub fn residual(&self, p: Param, prev: &StateVector, next: &StateVector, dt: f64) -> Vec<f64> {
        let (nu, np) = (self.sys.n_u(), self.sys.n_p());
        let mut out = vec![0.0; nu + np + 1];
        match p {
            Param::Alpha | Param::Beta => out[..nu].copy_from_slice(&self.damping(p, &next.u_dot)),
            Param::YoungModulus => {
                let beta = self.theta.damping().beta;
                let w: Vec<f64> = next.u.iter().zip(&next.u_dot).map(|(u, v)| u + beta * v).collect();
                out[..nu].copy_from_slice(&self.stiffness_e(&w));
            }
            Param::Resistance | Param::Capacitance => {
                out[nu + np] = self.circuit(p, next.p_bar, prev.p_bar, dt);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityOptions {
    /// Differentiate the static preload with respect to E. When off, all
    /// sensitivities start from zero.
    pub include_initial: bool,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self { include_initial: true }
    }
}

/// Sensitivities of the released preload state.
///
/// Only E enters the static problem; α and β act on rates that vanish at
/// rest, and the electrode starts grounded, so R and C have no effect.
pub fn initial_sensitivities(sys: &ReducedSystem, preload: &Preload, stiffness: &CsrMatrix) -> Result<SensitivityBlock> {
    let mut block = SensitivityBlock::zeros(sys);
    let u0 = &preload.state.u;
    let dk_u0: Vec<f64> = sys.stiffness_beam.mul_vec(u0).iter().map(|v| v / sys.reference_modulus).collect();
    let f_u: Vec<f64> = dk_u0.iter().map(|v| -v).collect();
    let (su, sp) = preload.statics.solve(&f_u, &vec![0.0; sys.n_p()])?;
    // M s_ü = −(∂K/∂E) u⁰ − K s_u − Lᵀ s_p
    let ksu = stiffness.mul_vec(&su);
    let ltsp = sys.coupling.tr_mul_vec(&sp);
    let mut sa: Vec<f64> = (0..su.len()).map(|i| f_u[i] - ksu[i] - ltsp[i]).collect();
    preload.mass_lu.solve_in_place(&mut sa);
    let col = &mut block.columns[Param::YoungModulus.index()];
    col.u = su;
    col.p = sp;
    col.u_ddot = sa;
    Ok(block)
}

/// Advance the sensitivities over the step `prev → next` already taken by
/// `stepper`.
pub fn step_sensitivity(
    stepper: &TransientStepper<'_>,
    prev: &StateVector,
    next: &StateVector,
    sens_prev: &SensitivityBlock,
) -> Result<SensitivityBlock> {
    let sys = stepper.sys;
    if sens_prev.columns.len() != Param::COUNT {
        return Err(Error::Dimension(format!("{} sensitivity columns, expected {}", sens_prev.columns.len(), Param::COUNT)));
    }
    let n = sys.n_u() + sys.n_p() + 1;
    let dt = stepper.grid.dt;
    let partials = ParameterPartials::new(sys, stepper.theta, &stepper.stiffness);
    let mut rhs = Vec::with_capacity(n * Param::COUNT);
    let mut predictors = Vec::with_capacity(Param::COUNT);
    for p in Param::ALL {
        let s = &sens_prev.columns[p.index()];
        let (ut, vh) = stepper.predict(&s.u, &s.u_dot, &s.u_ddot);
        let mut r = stepper.rhs(&ut, &vh, &s.p, s.p_bar, None);
        for (ri, di) in r.iter_mut().zip(partials.residual(p, prev, next, dt)) {
            *ri -= di;
        }
        rhs.extend_from_slice(&r);
        predictors.push((ut, vh));
    }
    stepper.lu.solve_many_in_place(&mut rhs, Param::COUNT);
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: (next.time / dt).round() as usize,
        });
    }
    let columns = rhs
        .chunks(n)
        .zip(predictors)
        .zip(&sens_prev.columns)
        .map(|((x, (ut, vh)), s)| stepper.finish(x, ut, vh, s))
        .collect();
    Ok(SensitivityBlock {
        time: next.time,
        columns,
    })
}

/// Observables and their sensitivities at every time level.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRecord {
    pub times: Vec<f64>,
    /// Normal velocity at the laser point.
    pub vz: Vec<f64>,
    /// Electrode potential.
    pub voltage: Vec<f64>,
    /// `d_vz[k][n] = ∂vz(tₙ)/∂θ_k`.
    pub d_vz: Vec<Vec<f64>>,
    pub d_voltage: Vec<Vec<f64>>,
}

pub const SENSITIVITY_HEADER: [&str; 11] = [
    "t",
    "dvz_dalpha",
    "dvz_dbeta",
    "dvz_dE",
    "dvz_dR",
    "dvz_dC",
    "dV_dalpha",
    "dV_dbeta",
    "dV_dE",
    "dV_dR",
    "dV_dC",
];

impl SensitivityRecord {
    fn new(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            vz: Vec::with_capacity(n),
            voltage: Vec::with_capacity(n),
            d_vz: vec![Vec::with_capacity(n); Param::COUNT],
            d_voltage: vec![Vec::with_capacity(n); Param::COUNT],
        }
    }

    fn push(&mut self, laser: Option<usize>, s: &StateVector, sens: &SensitivityBlock) {
        self.times.push(s.time);
        self.vz.push(laser.map_or(0.0, |l| s.u_dot[l]));
        self.voltage.push(s.p_bar);
        for (k, col) in sens.columns.iter().enumerate() {
            self.d_vz[k].push(laser.map_or(0.0, |l| col.u_dot[l]));
            self.d_voltage[k].push(col.p_bar);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut cols: Vec<&[f64]> = vec![&self.times];
        cols.extend(self.d_vz.iter().map(Vec::as_slice));
        cols.extend(self.d_voltage.iter().map(Vec::as_slice));
        write_csv(path.as_ref(), &SENSITIVITY_HEADER, &cols)
    }
}

/// Transient run with sensitivities, starting from the released preload.
pub fn run_with_sensitivities(
    sys: &ReducedSystem,
    grid: &TimeGrid,
    preload: &Preload,
    theta: &ParameterSet,
    options: &SensitivityOptions,
) -> Result<SensitivityRecord> {
    preload.state.check_sizes(sys)?;
    let stepper = TransientStepper::new(sys, *grid, *theta)?;
    let mut sens = if options.include_initial {
        initial_sensitivities(sys, preload, &stepper.stiffness)?
    } else {
        SensitivityBlock::zeros(sys)
    };
    let mut rec = SensitivityRecord::new(grid.n_steps + 1);
    let mut state = preload.state.clone();
    rec.push(sys.laser_dof, &state, &sens);
    for n in 1..=grid.n_steps {
        let next = stepper.step(&state, n)?;
        sens = step_sensitivity(&stepper, &state, &next, &sens)?;
        state = next;
        rec.push(sys.laser_dof, &state, &sens);
    }
    Ok(rec)
}

/// Comparison of one sensitivity column with central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FdCheck {
    pub param: Param,
    /// `(relative step, L² error of vz, L² error of V)` for every step tried.
    pub sweep: Vec<(f64, f64, f64)>,
}

impl FdCheck {
    /// Entry of the sweep with the smallest combined error.
    pub fn best(&self) -> (f64, f64, f64) {
        self.sweep
            .iter()
            .copied()
            .min_by(|a, b| a.1.max(a.2).total_cmp(&b.1.max(b.2)))
            .unwrap_or((f64::NAN, f64::INFINITY, f64::INFINITY))
    }
}

/// Relative L² distance `‖a − b‖ / ‖b‖` (absolute if `b` vanishes).
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nb = norm2(b);
    if nb > 0.0 {
        norm2(&diff) / nb
    } else {
        norm2(&diff)
    }
}

/// Relative steps tried by [`fd_check`] in the default sweep.
pub const FD_STEPS: [f64; 5] = [0.2, 0.1, 5e-2, 1e-2, 1e-3];

/// Check the direct-differentiation column of `param` against finite
/// differences of the forward model for each relative step in `rel_steps`.
///
/// The stencil is the sixth-order central one, so that steps large enough
/// to swamp solver round-off still have negligible truncation error. Every
/// step must keep the parameter positive, i.e. `rel < 1/3`.
pub fn fd_check(
    sys: &ReducedSystem,
    grid: &TimeGrid,
    theta: &ParameterSet,
    record: &SensitivityRecord,
    param: Param,
    rel_steps: &[f64],
) -> Result<FdCheck> {
    let k = param.index();
    let mut sweep = Vec::with_capacity(rel_steps.len());
    for &rel in rel_steps {
        let h = rel * theta.get(param).abs();
        let run = |m: f64| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut t = *theta;
            t.set(param, theta.get(param) + m * h);
            observables(sys, grid, &t)
        };
        let runs = [run(3.0)?, run(2.0)?, run(1.0)?, run(-1.0)?, run(-2.0)?, run(-3.0)?];
        let stencil = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
            let [a, b, c, d, e, f] = runs.each_ref().map(pick);
            (0..a.len())
                .map(|i| (a[i] - 9.0 * b[i] + 45.0 * c[i] - 45.0 * d[i] + 9.0 * e[i] - f[i]) / (60.0 * h))
                .collect()
        };
        let fd_v = stencil(|r| &r.0);
        let fd_u = stencil(|r| &r.1);
        sweep.push((rel, relative_l2(&record.d_vz[k], &fd_v), relative_l2(&record.d_voltage[k], &fd_u)));
    }
    Ok(FdCheck { param, sweep })
}

/// Laser velocity and electrode potential series of a released-preload run.
pub fn observables(sys: &ReducedSystem, grid: &TimeGrid, theta: &ParameterSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let pre = crate::solve::preload(sys, theta.young_modulus())?;
    let stepper = TransientStepper::new(sys, *grid, *theta)?.with_refinement(2);
    let mut vz = Vec::with_capacity(grid.n_steps + 1);
    let mut volt = Vec::with_capacity(grid.n_steps + 1);
    let laser = sys.laser_dof;
    let mut s = pre.state;
    vz.push(laser.map_or(0.0, |l| s.u_dot[l]));
    volt.push(s.p_bar);
    for n in 1..=grid.n_steps {
        s = stepper.step(&s, n)?;
        vz.push(laser.map_or(0.0, |l| s.u_dot[l]));
        volt.push(s.p_bar);
    }
    Ok((vz, volt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, AssemblyOptions, Materials};
    use crate::mesh::{generate_assembly_mesh, AssemblyGeometry, MeshResolution};
    use crate::solve::preload;

    fn system(opts: AssemblyOptions) -> ReducedSystem {
        let mesh = generate_assembly_mesh(&AssemblyGeometry::default(), &MeshResolution::coarse(), 1).unwrap();
        assemble(&mesh, &Materials::default(), &opts).unwrap().reduce()
    }

    #[test]
    fn damping_partials() {
        let sys = system(AssemblyOptions::default());
        let mut theta = ParameterSet::trf_optimum();
        let k = sys.stiffness(theta.young_modulus());
        let v: Vec<f64> = (0..sys.n_u()).map(|i| (0.3 * i as f64).sin()).collect();
        let part = ParameterPartials::new(&sys, theta, &k);
        assert_eq!(part.damping(Param::Alpha, &v), sys.mass.mul_vec(&v));
        // K is linear in E with the beam block as slope.
        let dk = part.stiffness_e(&v);
        let k2 = sys.stiffness(2.0 * theta.young_modulus()).mul_vec(&v);
        let k1 = k.mul_vec(&v);
        let e = theta.young_modulus();
        for i in 0..v.len() {
            assert!((k2[i] - k1[i] - e * dk[i]).abs() <= 1e-12 * k1[i].abs().max(e * dk[i].abs()).max(1.0));
        }
        theta.set(Param::Beta, 0.0);
        let part = ParameterPartials::new(&sys, theta, &k);
        assert!(part.damping(Param::YoungModulus, &v).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn no_load_gives_zero_sensitivities() {
        let sys = system(AssemblyOptions {
            gravity: 0.0,
            tip_force: 0.0,
            ..Default::default()
        });
        let theta = ParameterSet::initial_guess();
        let pre = preload(&sys, theta.young_modulus()).unwrap();
        let grid = TimeGrid::new(1e-4, 10).unwrap();
        let rec = run_with_sensitivities(&sys, &grid, &pre, &theta, &SensitivityOptions::default()).unwrap();
        assert!(rec.d_vz.iter().chain(&rec.d_voltage).flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn matches_finite_differences_for_r_and_e() {
        let sys = system(AssemblyOptions::default());
        let theta = ParameterSet::trf_optimum();
        let pre = preload(&sys, theta.young_modulus()).unwrap();
        let grid = TimeGrid::new(1e-4, 40).unwrap();
        let rec = run_with_sensitivities(&sys, &grid, &pre, &theta, &SensitivityOptions::default()).unwrap();
        for p in [Param::Resistance, Param::YoungModulus] {
            let chk = fd_check(&sys, &grid, &theta, &rec, p, &FD_STEPS).unwrap();
            let (_, ev, eu) = chk.best();
            assert!(ev < 1e-4 && eu < 1e-4, "{p:?}: {ev:e} {eu:e}");
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rec = SensitivityRecord {
            times: vec![0.0, 1.0],
            vz: vec![0.0; 2],
            voltage: vec![0.0; 2],
            d_vz: vec![vec![1.0, 2.0]; 5],
            d_voltage: vec![vec![3.0, 4.0]; 5],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        rec.write_csv(&p).unwrap();
        let cols = crate::io::read_csv(&p, &SENSITIVITY_HEADER).unwrap();
        assert_eq!(cols[10], vec![3.0, 4.0]);
    }
}
