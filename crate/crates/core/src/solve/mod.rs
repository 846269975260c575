//! Static preload, modal analysis and Newmark time stepping of the coupled system.

mod modal;
mod statics;
mod transient;

pub use modal::{solve_modal, Mode};
pub use statics::{preload, solve_static, Preload, StaticSolver};
pub use transient::{run_transient, RunOptions, TransientRecord, TransientStepper, TRANSIENT_HEADER};

use crate::error::{Error, Result};
use crate::fem::ReducedSystem;
use crate::sparse::CsrMatrix;

/// Full discrete state at one time level (free DOFs only).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub time: f64,
    pub u: Vec<f64>,
    pub u_dot: Vec<f64>,
    pub u_ddot: Vec<f64>,
    pub p: Vec<f64>,
    pub p_dot: Vec<f64>,
    pub p_bar: f64,
    /// Backward difference of the electrode potential.
    pub p_bar_dot: f64,
}

impl StateVector {
    pub fn zeros(n_u: usize, n_p: usize) -> Self {
        Self {
            time: 0.0,
            u: vec![0.0; n_u],
            u_dot: vec![0.0; n_u],
            u_ddot: vec![0.0; n_u],
            p: vec![0.0; n_p],
            p_dot: vec![0.0; n_p],
            p_bar: 0.0,
            p_bar_dot: 0.0,
        }
    }

    pub fn for_system(sys: &ReducedSystem) -> Self {
        Self::zeros(sys.n_u(), sys.n_p())
    }

    pub fn is_finite(&self) -> bool {
        [&self.u, &self.u_dot, &self.u_ddot, &self.p, &self.p_dot]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self.p_bar.is_finite()
            && self.p_bar_dot.is_finite()
    }

    pub(crate) fn check_sizes(&self, sys: &ReducedSystem) -> Result<()> {
        let (nu, np) = (sys.n_u(), sys.n_p());
        if self.u.len() != nu || self.u_dot.len() != nu || self.u_ddot.len() != nu {
            return Err(Error::Dimension(format!("state has {} displacement DOFs, system {nu}", self.u.len())));
        }
        if self.p.len() != np || self.p_dot.len() != np {
            return Err(Error::Dimension(format!("state has {} potential DOFs, system {np}", self.p.len())));
        }
        Ok(())
    }
}

/// Uniform time grid and Newmark parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
    pub newmark_beta: f64,
    pub newmark_gamma: f64,
}

impl Default for TimeGrid {
    /// 2500 steps of 20 µs with the trapezoidal rule.
    fn default() -> Self {
        Self {
            dt: 2e-5,
            n_steps: 2500,
            newmark_beta: 0.25,
            newmark_gamma: 0.5,
        }
    }
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        let g = Self {
            dt,
            n_steps,
            ..Self::default()
        };
        g.validate()?;
        Ok(g)
    }

    /// Grid covering `[0, horizon]` with step `dt` (rounded to whole steps).
    pub fn covering(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon", "must be positive"));
        }
        Self::new(dt, (horizon / dt).round().max(1.0) as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps", "must be at least 1"));
        }
        let (b, g) = (self.newmark_beta, self.newmark_gamma);
        if !(g >= 0.5 && 2.0 * b >= g) {
            return Err(Error::invalid(
                "newmark",
                format!("need 2β ≥ γ ≥ 1/2 for unconditional stability, got β = {b}, γ = {g}"),
            ));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| i as f64 * self.dt).collect()
    }
}

/// Backward error `max|Ax − b| / max(|A||x| + |b|)`, evaluated per row range.
pub(crate) fn block_residual(a: &CsrMatrix, x: &[f64], b: &[f64], ranges: &[std::ops::Range<usize>]) -> f64 {
    let ax = a.mul_vec(x);
    let mut worst = 0.0f64;
    for r in ranges {
        let mut res = 0.0f64;
        let mut scale = 0.0f64;
        for i in r.clone() {
            res = res.max((ax[i] - b[i]).abs());
            let (cols, vals) = a.row(i);
            let s: f64 = cols.iter().zip(vals).map(|(&j, v)| (v * x[j]).abs()).sum();
            scale = scale.max(s + b[i].abs());
        }
        if scale > 0.0 {
            worst = worst.max(res / scale);
        }
    }
    worst
}
