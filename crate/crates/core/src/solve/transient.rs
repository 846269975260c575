use std::path::Path;

use super::{block_residual, StateVector, TimeGrid};
use crate::error::{Error, Result};
use crate::fem::{energy_audit, EnergyAudit, ReducedSystem};
use crate::io::write_csv;
use crate::model::{CircuitParams, ParameterSet, RayleighDamping};
use crate::sparse::{dot, CsrMatrix, SparseLu, TripletBuilder};

/// One factorized Newmark step for fixed parameters and time step.
///
/// Unknowns of the step system are `[ü (nu), p (np), p̄]`. Rates follow from
/// the Newmark update for the displacement and a backward difference for the
/// potentials.
pub struct TransientStepper<'a> {
    pub(crate) sys: &'a ReducedSystem,
    pub(crate) grid: TimeGrid,
    pub(crate) theta: ParameterSet,
    pub(crate) stiffness: CsrMatrix,
    matrix: CsrMatrix,
    pub(crate) lu: SparseLu,
    electrode_nodes: Vec<usize>,
    refinement: usize,
}

impl std::fmt::Debug for TransientStepper<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransientStepper")
            .field("grid", &self.grid)
            .field("theta", &self.theta)
            .finish_non_exhaustive()
    }
}

impl<'a> TransientStepper<'a> {
    pub fn new(sys: &'a ReducedSystem, grid: TimeGrid, theta: ParameterSet) -> Result<Self> {
        grid.validate()?;
        let d = theta.damping();
        let c = theta.circuit();
        RayleighDamping::new(d.alpha, d.beta)?;
        CircuitParams::new(c.resistance, c.capacitance)?;
        if !(theta.young_modulus() > 0.0) {
            return Err(Error::invalid("E", "must be positive"));
        }
        let (nu, np) = (sys.n_u(), sys.n_p());
        let n = nu + np + 1;
        let ip = nu + np;
        let (dt, beta, gamma) = (grid.dt, grid.newmark_beta, grid.newmark_gamma);
        let stiffness = sys.stiffness(theta.young_modulus());

        let mut t = TripletBuilder::new(n, n);
        t.add_block(&sys.mass, 0, 0, 1.0 + gamma * dt * d.alpha);
        t.add_block(&stiffness, 0, 0, gamma * dt * d.beta + beta * dt * dt);
        t.add_block(&sys.coupling.transpose(), 0, nu, 1.0);
        t.add_block(&sys.coupling, nu, 0, -beta * dt * dt);
        t.add_block(&sys.potential, nu, nu, 1.0);
        for (i, &g) in sys.electrode_flux_u.iter().enumerate() {
            if g != 0.0 {
                t.push(i, ip, g);
                t.push(ip, i, -gamma * dt * g);
            }
        }
        for (i, (&r, &f)) in sys.nitsche_rhs.iter().zip(&sys.electrode_flux_p).enumerate() {
            if r != 0.0 {
                t.push(nu + i, ip, -r);
            }
            if f != 0.0 {
                t.push(ip, nu + i, f / dt);
            }
        }
        // Charge leaving the electrode feeds the parallel RC load.
        t.push(ip, ip, 0.5 / c.resistance + c.capacitance / dt);
        let matrix = t.build();
        let lu = SparseLu::new(&matrix)?;
        let electrode_nodes = (0..np).filter(|&i| sys.electrode[i] > 0.5).collect();
        Ok(Self {
            sys,
            grid,
            theta,
            stiffness,
            matrix,
            lu,
            electrode_nodes,
            refinement: 0,
        })
    }

    /// Apply `sweeps` steps of iterative refinement to every step solve.
    pub fn with_refinement(mut self, sweeps: usize) -> Self {
        self.refinement = sweeps;
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn theta(&self) -> &ParameterSet {
        &self.theta
    }

    /// The constant step matrix.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Newmark predictors `(ũ, v̂)`.
    pub(crate) fn predict(&self, u: &[f64], v: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (dt, beta, gamma) = (self.grid.dt, self.grid.newmark_beta, self.grid.newmark_gamma);
        let cu = (0.5 - beta) * dt * dt;
        let cv = (1.0 - gamma) * dt;
        let ut = (0..u.len()).map(|i| u[i] + dt * v[i] + cu * a[i]).collect();
        let vh = (0..u.len()).map(|i| v[i] + cv * a[i]).collect();
        (ut, vh)
    }

    /// Right-hand side of the step system; `load` is the mechanical load or
    /// `None` for the homogeneous (sensitivity) version.
    pub(crate) fn rhs(&self, ut: &[f64], vh: &[f64], p_prev: &[f64], pbar_prev: f64, load: Option<&[f64]>) -> Vec<f64> {
        let sys = self.sys;
        let (nu, np) = (sys.n_u(), sys.n_p());
        let d = self.theta.damping();
        let c = self.theta.circuit();
        let dt = self.grid.dt;
        let mut out = vec![0.0; nu + np + 1];
        let (ra, rest) = out.split_at_mut(nu);
        if let Some(b) = load {
            ra.copy_from_slice(b);
        }
        let shifted: Vec<f64> = ut.iter().zip(vh).map(|(u, v)| u + d.beta * v).collect();
        self.stiffness.mul_vec_into(&shifted, ra, -1.0, 1.0);
        if d.alpha != 0.0 {
            sys.mass.mul_vec_into(vh, ra, -d.alpha, 1.0);
        }
        let (rb, rc) = rest.split_at_mut(np);
        sys.coupling.mul_vec_into(ut, rb, 1.0, 0.0);
        rc[0] = dot(&sys.electrode_flux_p, p_prev) / dt
            + dot(&sys.electrode_flux_u, vh)
            + pbar_prev * (c.capacitance / dt - 0.5 / c.resistance);
        out
    }

    /// Assemble the new state from the step solution `x`.
    pub(crate) fn finish(&self, x: &[f64], ut: Vec<f64>, vh: Vec<f64>, prev: &StateVector) -> StateVector {
        let nu = self.sys.n_u();
        let np = self.sys.n_p();
        let (dt, beta, gamma) = (self.grid.dt, self.grid.newmark_beta, self.grid.newmark_gamma);
        let acc = x[..nu].to_vec();
        let mut u = ut;
        let mut v = vh;
        for i in 0..nu {
            u[i] += beta * dt * dt * acc[i];
            v[i] += gamma * dt * acc[i];
        }
        let p = x[nu..nu + np].to_vec();
        let p_dot = p.iter().zip(&prev.p).map(|(a, b)| (a - b) / dt).collect();
        let p_bar = x[nu + np];
        StateVector {
            time: prev.time + dt,
            u,
            u_dot: v,
            u_ddot: acc,
            p,
            p_dot,
            p_bar,
            p_bar_dot: (p_bar - prev.p_bar) / dt,
        }
    }

    /// Advance one step under the self-weight (the tip force is released).
    ///
    /// `step_index` is the index of the new level on a grid starting at t = 0.
    pub fn step(&self, prev: &StateVector, step_index: usize) -> Result<StateVector> {
        let (ut, vh) = self.predict(&prev.u, &prev.u_dot, &prev.u_ddot);
        let b = self.rhs(&ut, &vh, &prev.p, prev.p_bar, Some(&self.sys.body_load));
        let mut x = self.lu.solve(&b);
        for _ in 0..self.refinement {
            let sx = self.matrix.mul_vec(&x);
            let mut r: Vec<f64> = b.iter().zip(&sx).map(|(b, a)| b - a).collect();
            self.lu.solve_in_place(&mut r);
            x.iter_mut().zip(&r).for_each(|(xi, ri)| *xi += ri);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: step_index });
        }
        let mut next = self.finish(&x, ut, vh, prev);
        // Grid times without accumulated round-off.
        next.time = step_index as f64 * self.grid.dt;
        Ok(next)
    }

    /// Backward error of the step equations between `prev` and `next`,
    /// taken blockwise over the mechanical, potential and circuit rows.
    pub fn residual(&self, prev: &StateVector, next: &StateVector) -> f64 {
        let (ut, vh) = self.predict(&prev.u, &prev.u_dot, &prev.u_ddot);
        let b = self.rhs(&ut, &vh, &prev.p, prev.p_bar, Some(&self.sys.body_load));
        let mut x = next.u_ddot.clone();
        x.extend_from_slice(&next.p);
        x.push(next.p_bar);
        let (nu, np) = (self.sys.n_u(), self.sys.n_p());
        block_residual(&self.matrix, &x, &b, &[0..nu, nu..nu + np, nu + np..nu + np + 1])
    }

    /// Largest deviation of the potential on the free electrode from `p̄`.
    pub fn electrode_gap(&self, state: &StateVector) -> f64 {
        self.electrode_nodes
            .iter()
            .map(|&i| (state.p[i] - state.p_bar).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Evaluate the energy audit at every step (three extra products).
    pub record_energy: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { record_energy: true }
    }
}

/// Sampled outputs of a transient run, one entry per time level.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientRecord {
    pub times: Vec<f64>,
    pub uz_laser: Vec<f64>,
    pub vz_laser: Vec<f64>,
    pub p_bar: Vec<f64>,
    pub charge_free: Vec<f64>,
    pub charge_ground: Vec<f64>,
    /// Empty unless energies were recorded.
    pub energy: Vec<EnergyAudit>,
    pub electrode_gap: Vec<f64>,
    pub final_state: StateVector,
}

pub const TRANSIENT_HEADER: [&str; 9] = ["t", "uz_L", "vz_L", "p_bar", "Q_pQ", "Q_p0", "E_kin", "E_strain", "E_elec"];

impl TransientRecord {
    fn with_capacity(n: usize, final_state: StateVector) -> Self {
        Self {
            times: Vec::with_capacity(n),
            uz_laser: Vec::with_capacity(n),
            vz_laser: Vec::with_capacity(n),
            p_bar: Vec::with_capacity(n),
            charge_free: Vec::with_capacity(n),
            charge_ground: Vec::with_capacity(n),
            energy: Vec::new(),
            electrode_gap: Vec::with_capacity(n),
            final_state,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.energy.len() != self.len() {
            return Err(Error::Dimension("energies were not recorded".into()));
        }
        let kin: Vec<f64> = self.energy.iter().map(|e| e.kinetic).collect();
        let strain: Vec<f64> = self.energy.iter().map(|e| e.strain).collect();
        let elec: Vec<f64> = self.energy.iter().map(|e| e.electric).collect();
        write_csv(
            path.as_ref(),
            &TRANSIENT_HEADER,
            &[
                &self.times,
                &self.uz_laser,
                &self.vz_laser,
                &self.p_bar,
                &self.charge_free,
                &self.charge_ground,
                &kin,
                &strain,
                &elec,
            ],
        )
    }
}

fn sample(rec: &mut TransientRecord, stepper: &TransientStepper<'_>, s: &StateVector, energy: bool) {
    let sys = stepper.sys;
    rec.times.push(s.time);
    let (uz, vz) = sys.laser_dof.map_or((0.0, 0.0), |l| (s.u[l], s.u_dot[l]));
    rec.uz_laser.push(uz);
    rec.vz_laser.push(vz);
    rec.p_bar.push(s.p_bar);
    rec.charge_free.push(sys.electrode_charge(&s.u, &s.p));
    rec.charge_ground.push(sys.ground_charge(&s.u, &s.p));
    rec.electrode_gap.push(stepper.electrode_gap(s));
    if energy {
        rec.energy.push(energy_audit(sys, &stepper.stiffness, &stepper.theta, s));
    }
}

/// Integrate from `initial` over the grid with one factorization.
pub fn run_transient(
    sys: &ReducedSystem,
    grid: &TimeGrid,
    initial: &StateVector,
    theta: &ParameterSet,
    options: &RunOptions,
) -> Result<TransientRecord> {
    initial.check_sizes(sys)?;
    let stepper = TransientStepper::new(sys, *grid, *theta)?;
    let mut rec = TransientRecord::with_capacity(grid.n_steps + 1, initial.clone());
    let mut state = initial.clone();
    sample(&mut rec, &stepper, &state, options.record_energy);
    for n in 1..=grid.n_steps {
        state = stepper.step(&state, n)?;
        sample(&mut rec, &stepper, &state, options.record_energy);
    }
    rec.final_state = state;
    Ok(rec)
}
