use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{check_start, residuals, residuals_and_jacobian, ForwardModel, HistoryEntry, IdentResult, MeasurementSet, ObjectiveValue, ResidualSelector};
use crate::error::{Error, Result};
use crate::model::{Param, ParameterBounds, ParameterSet};

/// Source of the residual Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    /// Direct-differentiation sensitivities (one augmented run).
    Sensitivity,
    /// Forward differences in unit coordinates (one run per active parameter).
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers F by less than `ftol · F`.
    pub ftol: f64,
    /// Stop when the step is shorter than `xtol · (‖z‖ + xtol)` in unit coordinates.
    pub xtol: f64,
    pub jacobian: JacobianMode,
    /// Unit-coordinate step of the difference Jacobian.
    pub fd_step: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            ftol: 1e-8,
            xtol: 1e-8,
            jacobian: JacobianMode::Sensitivity,
            fd_step: 1e-5,
        }
    }
}

struct Eval {
    r: Vec<f64>,
    f: ObjectiveValue,
}

struct Problem<'a> {
    model: &'a ForwardModel<'a>,
    bounds: &'a ParameterBounds,
    meas: &'a MeasurementSet,
    selector: ResidualSelector,
    active: Vec<usize>,
    base: ParameterSet,
    options: LsqOptions,
    evaluations: usize,
    jacobians: usize,
}

impl Problem<'_> {
    fn theta(&self, z: &[f64]) -> ParameterSet {
        let mut full = self.bounds.set_to_unit(&self.base);
        for (j, &k) in self.active.iter().enumerate() {
            full[k] = z[j];
        }
        self.bounds.set_from_unit(&full)
    }

    fn residuals(&mut self, z: &[f64]) -> Result<Eval> {
        self.evaluations += 1;
        let (r, f) = residuals(self.model, &self.theta(z), self.meas, self.selector)?;
        Ok(Eval { r, f })
    }

    /// Residuals and the Jacobian of the active unit coordinates.
    fn linearize(&mut self, z: &[f64]) -> Result<(Eval, DMatrix<f64>)> {
        let theta = self.theta(z);
        self.jacobians += 1;
        match self.options.jacobian {
            JacobianMode::Sensitivity => {
                self.evaluations += 1;
                let (r, jac, f) = residuals_and_jacobian(self.model, &theta, self.meas, self.selector)?;
                let mut out = DMatrix::zeros(r.len(), self.active.len());
                for (j, &k) in self.active.iter().enumerate() {
                    let p = Param::ALL[k];
                    let d = self.bounds.unit_derivative(p, self.bounds.to_unit(p, theta.get(p)));
                    out.set_column(j, &(jac.column(k) * d));
                }
                Ok((Eval { r, f }, out))
            }
            JacobianMode::FiniteDifference => {
                let base = self.residuals(z)?;
                let h = self.options.fd_step;
                let shifted: Vec<(f64, Vec<f64>)> = (0..self.active.len())
                    .map(|j| {
                        let mut zz = z.to_vec();
                        let step = if zz[j] + h <= 1.0 { h } else { -h };
                        zz[j] += step;
                        (step, zz)
                    })
                    .collect();
                let runs: Vec<Result<Vec<f64>>> = shifted
                    .par_iter()
                    .map(|(_, zz)| residuals(self.model, &self.theta(zz), self.meas, self.selector).map(|(r, _)| r))
                    .collect();
                self.evaluations += runs.len();
                let mut out = DMatrix::zeros(base.r.len(), self.active.len());
                for (j, ((step, _), run)) in shifted.iter().zip(runs).enumerate() {
                    let r = run?;
                    for i in 0..r.len() {
                        out[(i, j)] = (r[i] - base.r[i]) / step;
                    }
                }
                Ok((base, out))
            }
        }
    }
}

/// Bounded nonlinear least squares by projected Levenberg–Marquardt.
///
/// Only parameters with `active[k]` set move; the others stay at their
/// values in `theta0`. Iterates are kept inside the bounds by projection;
/// parameters sitting on a bound with the gradient pushing outward are
/// frozen for the step.
pub fn identify_lsq(
    model: &ForwardModel<'_>,
    theta0: &ParameterSet,
    bounds: &ParameterBounds,
    meas: &MeasurementSet,
    active: [bool; Param::COUNT],
    selector: ResidualSelector,
    options: &LsqOptions,
) -> Result<IdentResult> {
    check_start(theta0, bounds)?;
    let active_idx: Vec<usize> = (0..Param::COUNT).filter(|&k| active[k]).collect();
    if active_idx.is_empty() {
        return Err(Error::invalid("active_mask", "no parameter selected"));
    }
    let mut prob = Problem {
        model,
        bounds,
        meas,
        selector,
        active: active_idx.clone(),
        base: *theta0,
        options: *options,
        evaluations: 0,
        jacobians: 0,
    };
    let unit0 = bounds.set_to_unit(theta0);
    let mut z: Vec<f64> = active_idx.iter().map(|&k| unit0[k]).collect();
    let (mut cur, mut jac) = prob.linearize(&z).map_err(|e| Error::Objective(format!("at the initial guess: {e}")))?;
    if !cur.f.total.is_finite() {
        return Err(Error::Objective("non-finite objective at the initial guess".into()));
    }
    let mut history = vec![HistoryEntry {
        theta: prob.theta(&z),
        objective: cur.f.total,
    }];
    let m = z.len();
    let mut lambda: Option<f64> = None;
    let mut nu = 2.0;
    let mut iterations = 0;
    let mut termination = String::from("maximum number of iterations reached");

    'outer: while iterations < options.max_iterations {
        iterations += 1;
        if cur.f.total == 0.0 {
            termination = "objective is zero".into();
            break;
        }
        let r = DVector::from_column_slice(&cur.r);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let free: Vec<usize> = (0..m)
            .filter(|&j| !((z[j] <= 0.0 && g[j] > 0.0) || (z[j] >= 1.0 && g[j] < 0.0)))
            .collect();
        if free.is_empty() || free.iter().all(|&j| g[j] == 0.0) {
            termination = "projected gradient vanishes".into();
            break;
        }
        let diag_max = free.iter().map(|&j| jtj[(j, j)]).fold(0.0f64, f64::max);
        let mut lam = *lambda.get_or_insert(1e-3);
        loop {
            let nf = free.len();
            let mut a = DMatrix::zeros(nf, nf);
            let mut b = DVector::zeros(nf);
            for (p, &i) in free.iter().enumerate() {
                for (q, &j) in free.iter().enumerate() {
                    a[(p, q)] = jtj[(i, j)];
                }
                a[(p, p)] += lam * jtj[(i, i)].max(1e-12 * diag_max);
                b[p] = -g[i];
            }
            let delta = a.clone().cholesky().map(|c| c.solve(&b)).or_else(|| a.lu().solve(&b));
            let Some(delta) = delta else {
                termination = "singular normal equations".into();
                break 'outer;
            };
            let mut z_new = z.clone();
            for (p, &i) in free.iter().enumerate() {
                z_new[i] = (z[i] + delta[p]).clamp(0.0, 1.0);
            }
            let step: Vec<f64> = (0..m).map(|j| z_new[j] - z[j]).collect();
            let step_norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
            let z_norm = z.iter().map(|s| s * s).sum::<f64>().sqrt();
            if step_norm <= options.xtol * (z_norm + options.xtol) {
                termination = "step below tolerance".into();
                break 'outer;
            }
            let s = DVector::from_column_slice(&step);
            let predicted = -(g.dot(&s)) - 0.5 * (s.transpose() * &jtj * &s)[(0, 0)];
            match prob.linearize(&z_new) {
                Ok((trial, trial_jac)) if trial.f.total.is_finite() && trial.f.total < cur.f.total => {
                    let actual = cur.f.total - trial.f.total;
                    let rho = if predicted > 0.0 { actual / predicted } else { 0.0 };
                    lambda = Some(lam * (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3)));
                    nu = 2.0;
                    let small = actual < options.ftol * cur.f.total;
                    z = z_new;
                    cur = trial;
                    jac = trial_jac;
                    history.push(HistoryEntry {
                        theta: prob.theta(&z),
                        objective: cur.f.total,
                    });
                    if small {
                        termination = "relative decrease of F below tolerance".into();
                        break 'outer;
                    }
                    break;
                }
                Ok(_) | Err(_) => {
                    lam *= nu;
                    nu *= 2.0;
                    if nu > 1e12 {
                        termination = "no further decrease possible".into();
                        break 'outer;
                    }
                }
            }
        }
    }

    Ok(IdentResult {
        theta: prob.theta(&z),
        objective: cur.f,
        history,
        evaluations: prob.evaluations,
        jacobian_evaluations: prob.jacobians,
        failed_evaluations: 0,
        iterations,
        termination,
    })
}

/// Result of the two-stage protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialResult {
    /// α, β, E fitted to the velocity alone (last pass).
    pub mechanical: IdentResult,
    /// R, C fitted to the voltage alone, mechanics frozen (last pass).
    pub electrical: IdentResult,
    /// Stage results of the passes before the last, in order.
    pub earlier: Vec<IdentResult>,
    pub theta: ParameterSet,
    /// Normalized two-block objective at `theta`.
    pub objective: ObjectiveValue,
}

impl SequentialResult {
    pub fn passes(&self) -> usize {
        self.earlier.len() / 2 + 1
    }

    pub fn evaluations(&self) -> usize {
        self.earlier.iter().map(|r| r.evaluations).sum::<usize>() + self.mechanical.evaluations + self.electrical.evaluations + 1
    }
}

/// Mechanical parameters from the velocity, then circuit parameters from
/// the voltage, repeated `passes` times.
///
/// The first mechanical stage runs with the circuit at its initial guess, so
/// the load damping it sees is wrong and α (whose effect is of the same size)
/// absorbs the difference. A second pass refits the mechanics against the
/// identified circuit.
pub fn identify_sequential(
    model: &ForwardModel<'_>,
    theta0: &ParameterSet,
    bounds: &ParameterBounds,
    meas: &MeasurementSet,
    passes: usize,
    options: &LsqOptions,
) -> Result<SequentialResult> {
    if passes == 0 {
        return Err(Error::invalid("passes", "must be at least 1"));
    }
    let mut earlier = Vec::with_capacity(2 * (passes - 1));
    let mut theta = *theta0;
    loop {
        let mechanical = identify_lsq(
            model,
            &theta,
            bounds,
            meas,
            [true, true, true, false, false],
            ResidualSelector::Velocity,
            options,
        )?;
        let electrical = identify_lsq(
            model,
            &mechanical.theta,
            bounds,
            meas,
            [false, false, false, true, true],
            ResidualSelector::Voltage,
            options,
        )?;
        theta = electrical.theta;
        if earlier.len() + 2 == 2 * passes {
            let objective = super::objective(model, &theta, meas)?;
            return Ok(SequentialResult {
                mechanical,
                electrical,
                earlier,
                theta,
                objective,
            });
        }
        earlier.push(mechanical);
        earlier.push(electrical);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::synthesize;
    use crate::ident::tests::small_system;
    use crate::solve::TimeGrid;

    #[test]
    fn starting_at_the_optimum_stops_at_once() {
        let sys = small_system();
        let model = ForwardModel::new(&sys, TimeGrid::new(2e-4, 50).unwrap()).unwrap();
        let theta = ParameterSet::trf_optimum();
        let times: Vec<f64> = (0..=50).map(|i| i as f64 * 2e-4).collect();
        let data = synthesize(&model, &theta, &times, 0.0, 0).unwrap();
        let res = identify_lsq(
            &model,
            &theta,
            &ParameterBounds::reference(),
            &data,
            [true; 5],
            ResidualSelector::Both,
            &LsqOptions::default(),
        )
        .unwrap();
        assert!(res.iterations <= 2, "{}", res.termination);
        assert!(res.objective.total <= 1e-12);
    }

    #[test]
    fn iterates_stay_feasible_at_a_bound() {
        let sys = small_system();
        let model = ForwardModel::new(&sys, TimeGrid::new(2e-4, 50).unwrap()).unwrap();
        let bounds = ParameterBounds::reference();
        let truth = ParameterSet::trf_optimum();
        let times: Vec<f64> = (0..=50).map(|i| i as f64 * 2e-4).collect();
        let data = synthesize(&model, &truth, &times, 0.0, 0).unwrap();
        // Start E on its upper bound; the data want it lower, α wants to go below its lower bound.
        let mut start = truth;
        start.set(Param::YoungModulus, bounds.upper.get(Param::YoungModulus));
        start.set(Param::Alpha, bounds.lower.get(Param::Alpha));
        let opts = LsqOptions {
            max_iterations: 5,
            ..Default::default()
        };
        let res = identify_lsq(&model, &start, &bounds, &data, [true, false, true, false, false], ResidualSelector::Velocity, &opts).unwrap();
        assert!(res.history.iter().all(|h| bounds.contains(&h.theta)));
        assert!(res.history.windows(2).all(|w| w[1].objective < w[0].objective));
        assert!(res.objective.total < res.history[0].objective);
    }

    #[test]
    fn jacobian_modes_agree() {
        let sys = small_system();
        let model = ForwardModel::new(&sys, TimeGrid::new(2e-4, 50).unwrap()).unwrap();
        let bounds = ParameterBounds::reference();
        let times: Vec<f64> = (0..=50).map(|i| i as f64 * 2e-4).collect();
        let data = synthesize(&model, &ParameterSet::trf_optimum(), &times, 0.0, 0).unwrap();
        let mk = |jacobian| Problem {
            model: &model,
            bounds: &bounds,
            meas: &data,
            selector: ResidualSelector::Both,
            active: (0..5).collect(),
            base: ParameterSet::initial_guess(),
            options: LsqOptions {
                jacobian,
                ..Default::default()
            },
            evaluations: 0,
            jacobians: 0,
        };
        let z = bounds.set_to_unit(&ParameterSet::initial_guess());
        let (_, ja) = mk(JacobianMode::Sensitivity).linearize(&z).unwrap();
        let (_, jf) = mk(JacobianMode::FiniteDifference).linearize(&z).unwrap();
        let err = (&ja - &jf).norm() / ja.norm();
        assert!(err < 1e-2, "{err:e}");
    }
}
