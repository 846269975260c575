use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{check_start, objective, ForwardModel, HistoryEntry, IdentResult, MeasurementSet, ObjectiveValue};
use crate::error::{Error, Result};
use crate::model::{Param, ParameterBounds, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmaesOptions {
    /// λ, the number of candidates per generation.
    pub population: usize,
    pub generations: usize,
    /// Initial step size in unit coordinates.
    pub sigma0: f64,
    pub seed: u64,
    /// Weight of the quadratic penalty on the distance a candidate had to
    /// be reflected back into the box, relative to the median F of the
    /// first generation.
    pub penalty: f64,
}

impl Default for CmaesOptions {
    fn default() -> Self {
        Self {
            population: 16,
            generations: 400,
            sigma0: 0.3,
            seed: 0,
            penalty: 1.0,
        }
    }
}

/// Fold `x` into `[0, 1]` by mirror reflection at the faces.
fn reflect(x: f64) -> f64 {
    let y = x.rem_euclid(2.0);
    if y > 1.0 {
        2.0 - y
    } else {
        y
    }
}

/// Covariance matrix adaptation evolution strategy on the full objective.
///
/// Runs exactly `population × generations` forward models. Candidates are
/// reflected into the box for evaluation and ranked by F plus a quadratic
/// penalty on the reflection distance; failed simulations rank last.
pub fn identify_cmaes(
    model: &ForwardModel<'_>,
    theta0: &ParameterSet,
    bounds: &ParameterBounds,
    meas: &MeasurementSet,
    options: &CmaesOptions,
) -> Result<IdentResult> {
    check_start(theta0, bounds)?;
    let lambda = options.population;
    if lambda < 4 {
        return Err(Error::invalid("population", "must be at least 4"));
    }
    if !(options.sigma0 > 0.0) {
        return Err(Error::invalid("sigma0", "must be positive"));
    }
    let n = Param::COUNT;
    let nf = n as f64;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu).map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln()).collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
    let damps = 1.0 + 2.0 * (0.0f64).max(((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0) + cs;
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let eval = |z: &[f64]| -> (ObjectiveValue, bool) {
        let mut zz = [0.0; 5];
        zz.copy_from_slice(z);
        match objective(model, &bounds.set_from_unit(&zz), meas) {
            Ok(f) if f.total.is_finite() => (f, true),
            _ => (ObjectiveValue::infinite(), false),
        }
    };

    let z0 = bounds.set_to_unit(theta0);
    let mut mean = DVector::from_column_slice(&z0);
    let mut penalty: Option<f64> = None;
    let mut sigma = options.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut basis = DMatrix::<f64>::identity(n, n);
    let mut scales = DVector::<f64>::from_element(n, 1.0);
    let mut pc = DVector::<f64>::zeros(n);
    let mut ps = DVector::<f64>::zeros(n);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);

    let mut best_z = z0;
    let mut best_f = ObjectiveValue::infinite();
    let mut history = Vec::with_capacity(options.generations);
    let mut evaluations = 0;
    let mut failed = 0;

    for gen in 0..options.generations {
        let samples: Vec<DVector<f64>> = (0..lambda)
            .map(|_| DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let ys: Vec<DVector<f64>> = samples.iter().map(|s| &basis * s.component_mul(&scales)).collect();
        let xs: Vec<DVector<f64>> = ys.iter().map(|y| &mean + y * sigma).collect();
        let folded: Vec<[f64; 5]> = xs
            .iter()
            .map(|x| {
                let mut z = [0.0; 5];
                for i in 0..n {
                    z[i] = reflect(x[i]);
                }
                z
            })
            .collect();
        let results: Vec<(ObjectiveValue, bool)> = folded.par_iter().map(|z| eval(z)).collect();
        evaluations += lambda;
        let penalty = *penalty.get_or_insert_with(|| {
            let mut finite: Vec<f64> = results.iter().map(|r| r.0.total).filter(|f| f.is_finite()).collect();
            finite.sort_by(f64::total_cmp);
            options.penalty * finite.get(finite.len() / 2).copied().unwrap_or(1.0).max(1e-12)
        });
        let mut fitness = Vec::with_capacity(lambda);
        for (k, (f, ok)) in results.iter().enumerate() {
            if !ok {
                failed += 1;
            }
            let dist2: f64 = (0..n).map(|i| (xs[k][i] - folded[k][i]).powi(2)).sum();
            fitness.push(f.total + penalty * dist2);
            if f.total < best_f.total {
                best_f = *f;
                best_z = folded[k];
            }
        }
        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));

        let old_mean = mean.clone();
        let mut y_w = DVector::<f64>::zeros(n);
        for (w, &k) in weights.iter().zip(&order) {
            y_w += &ys[k] * *w;
        }
        mean = &old_mean + &y_w * sigma;

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let inv_sqrt_y = &basis * (basis.transpose() * &y_w).component_div(&scales);
        ps = &ps * (1.0 - cs) + inv_sqrt_y * (cs * (2.0 - cs) * mueff).sqrt();
        let ps_norm = ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - cs).powi(2 * (gen as i32 + 1))).sqrt() / chi_n < 1.4 + 2.0 / (nf + 1.0);
        let hs = if hsig { 1.0 } else { 0.0 };
        pc = &pc * (1.0 - cc) + &y_w * (hs * (cc * (2.0 - cc) * mueff).sqrt());
        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, &k) in weights.iter().zip(&order) {
            rank_mu += &ys[k] * ys[k].transpose() * *w;
        }
        cov = &cov * (1.0 - c1 - cmu + (1.0 - hs) * c1 * cc * (2.0 - cc)) + &pc * pc.transpose() * c1 + rank_mu * cmu;
        cov = (&cov + cov.transpose()) * 0.5;
        sigma *= ((cs / damps) * (ps_norm / chi_n - 1.0)).exp();
        sigma = sigma.min(1e3);

        let eig = SymmetricEigen::new(cov.clone());
        basis = eig.eigenvectors;
        scales = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());

        history.push(HistoryEntry {
            theta: bounds.set_from_unit(&best_z),
            objective: best_f.total,
        });
    }

    Ok(IdentResult {
        theta: bounds.set_from_unit(&best_z),
        objective: best_f,
        history,
        evaluations,
        jacobian_evaluations: 0,
        failed_evaluations: failed,
        iterations: options.generations,
        termination: format!("{} generations completed", options.generations),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::synthesize;
    use crate::ident::tests::small_system;
    use crate::solve::TimeGrid;

    #[test]
    fn reflection_stays_in_box() {
        for x in [-2.3, -0.4, 0.0, 0.5, 1.0, 1.2, 3.7] {
            let y = reflect(x);
            assert!((0.0..=1.0).contains(&y), "{x} -> {y}");
        }
        assert_eq!(reflect(1.25), 0.75);
        assert_eq!(reflect(-0.25), 0.25);
    }

    #[test]
    fn deterministic_and_monotone() {
        let sys = small_system();
        let model = ForwardModel::new(&sys, TimeGrid::new(4e-4, 25).unwrap()).unwrap();
        let times: Vec<f64> = (0..=25).map(|i| i as f64 * 4e-4).collect();
        let data = synthesize(&model, &ParameterSet::trf_optimum(), &times, 0.0, 0).unwrap();
        let opts = CmaesOptions {
            population: 6,
            generations: 3,
            seed: 7,
            ..Default::default()
        };
        let a = identify_cmaes(&model, &ParameterSet::initial_guess(), &ParameterBounds::reference(), &data, &opts).unwrap();
        let b = identify_cmaes(&model, &ParameterSet::initial_guess(), &ParameterBounds::reference(), &data, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.evaluations, 6 * 3);
        assert!(a.history.windows(2).all(|w| w[1].objective <= w[0].objective));
        assert!(ParameterBounds::reference().contains(&a.theta));
    }
}
