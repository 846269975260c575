use super::{block_residual, StateVector};
use crate::error::{Error, Result};
use crate::fem::ReducedSystem;
use crate::sparse::{CsrMatrix, SparseLu, TripletBuilder};

/// Factorized static block `[[K, Lᵀ], [−L, A]]` with the electrode grounded.
#[derive(Debug)]
pub struct StaticSolver {
    matrix: CsrMatrix,
    lu: SparseLu,
    n_u: usize,
}

const STATIC_TOL: f64 = 1e-10;

impl StaticSolver {
    pub fn new(sys: &ReducedSystem, stiffness: &CsrMatrix) -> Result<Self> {
        let (nu, np) = (sys.n_u(), sys.n_p());
        let mut t = TripletBuilder::new(nu + np, nu + np);
        t.add_block(stiffness, 0, 0, 1.0);
        let lt = sys.coupling.transpose();
        t.add_block(&lt, 0, nu, 1.0);
        t.add_block(&sys.coupling, nu, 0, -1.0);
        t.add_block(&sys.potential, nu, nu, 1.0);
        let matrix = t.build();
        let lu = SparseLu::new(&matrix)
            .map_err(|e| Error::Factorization(format!("static system ({e}); is the beam clamped?")))?;
        Ok(Self { matrix, lu, n_u: nu })
    }

    /// Solve with mechanical load `f_u` and charge load `f_p`; returns `(u, p)`.
    ///
    /// Up to three steps of iterative refinement are applied until the
    /// blockwise backward error is below 1e-10.
    pub fn solve(&self, f_u: &[f64], f_p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.matrix.nrows();
        let mut b = Vec::with_capacity(n);
        b.extend_from_slice(f_u);
        b.extend_from_slice(f_p);
        if b.len() != n {
            return Err(Error::Dimension(format!("static load of length {} for {n} unknowns", b.len())));
        }
        let ranges = [0..self.n_u, self.n_u..n];
        let mut x = self.lu.solve(&b);
        let mut res = block_residual(&self.matrix, &x, &b, &ranges);
        for _ in 0..3 {
            if res <= 0.01 * STATIC_TOL {
                break;
            }
            let ax = self.matrix.mul_vec(&x);
            let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            self.lu.solve_in_place(&mut r);
            for (xi, ri) in x.iter_mut().zip(&r) {
                *xi += ri;
            }
            res = block_residual(&self.matrix, &x, &b, &ranges);
        }
        if !(res <= STATIC_TOL) {
            return Err(Error::Factorization(format!("static residual {res:.1e} above tolerance")));
        }
        let p = x.split_off(self.n_u);
        Ok((x, p))
    }
}

/// Static equilibrium under body load and tip force, electrode at zero potential.
pub fn solve_static(sys: &ReducedSystem, young_modulus: f64) -> Result<StateVector> {
    let k = sys.stiffness(young_modulus);
    let solver = StaticSolver::new(sys, &k)?;
    let load: Vec<f64> = sys.body_load.iter().zip(&sys.tip_load).map(|(b, t)| b + t).collect();
    let (u, p) = solver.solve(&load, &vec![0.0; sys.n_p()])?;
    let mut s = StateVector::for_system(sys);
    s.u = u;
    s.p = p;
    Ok(s)
}

/// Initial state of the release experiment together with the factorizations
/// needed to differentiate it.
#[derive(Debug)]
pub struct Preload {
    /// Static displacement and potential, zero rates, and the acceleration
    /// that follows from removing the tip force.
    pub state: StateVector,
    pub(crate) statics: StaticSolver,
    pub(crate) mass_lu: SparseLu,
}

pub fn preload(sys: &ReducedSystem, young_modulus: f64) -> Result<Preload> {
    let k = sys.stiffness(young_modulus);
    let statics = StaticSolver::new(sys, &k)?;
    let load: Vec<f64> = sys.body_load.iter().zip(&sys.tip_load).map(|(b, t)| b + t).collect();
    let (u, p) = statics.solve(&load, &vec![0.0; sys.n_p()])?;
    let mass_lu = SparseLu::new(&sys.mass)?;
    // M ü = b − K u − Lᵀ p once the tip force is gone.
    let ku = k.mul_vec(&u);
    let ltp = sys.coupling.tr_mul_vec(&p);
    let mut acc: Vec<f64> = (0..u.len()).map(|i| sys.body_load[i] - ku[i] - ltp[i]).collect();
    mass_lu.solve_in_place(&mut acc);
    let mut state = StateVector::for_system(sys);
    state.u = u;
    state.p = p;
    state.u_ddot = acc;
    Ok(Preload {
        state,
        statics,
        mass_lu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, AssemblyOptions, Materials};
    use crate::mesh::{generate_assembly_mesh, AssemblyGeometry, MeshResolution};

    fn system(opts: AssemblyOptions) -> ReducedSystem {
        let mesh = generate_assembly_mesh(&AssemblyGeometry::default(), &MeshResolution::coarse(), 1).unwrap();
        assemble(&mesh, &Materials::default(), &opts).unwrap().reduce()
    }

    #[test]
    fn zero_load_gives_zero_state() {
        let sys = system(AssemblyOptions {
            gravity: 0.0,
            tip_force: 0.0,
            ..Default::default()
        });
        let s = solve_static(&sys, 189e9).unwrap();
        assert!(s.u.iter().chain(&s.p).all(|v| *v == 0.0));
    }

    #[test]
    fn tip_load_is_linear() {
        let base = AssemblyOptions {
            gravity: 0.0,
            ..Default::default()
        };
        let s1 = solve_static(&system(base), 189e9).unwrap();
        let s2 = solve_static(
            &system(AssemblyOptions {
                tip_force: 2.0 * base.tip_force,
                ..base
            }),
            189e9,
        )
        .unwrap();
        for (a, b) in s1.u.iter().zip(&s2.u) {
            assert!((2.0 * a - b).abs() <= 1e-9 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn release_acceleration_balances_tip_force() {
        let sys = system(AssemblyOptions::default());
        let pre = preload(&sys, 189e9).unwrap();
        let l = sys.laser_dof.unwrap();
        assert!(pre.state.u[l] < 0.0);
        // Without the tip force the net inertial force equals the released load.
        let ma = sys.mass.mul_vec(&pre.state.u_ddot);
        let lifted: f64 = ma.iter().skip(2).step_by(3).sum();
        approx::assert_relative_eq!(lifted, AssemblyOptions::default().tip_force, max_relative = 1e-8);
    }
}
