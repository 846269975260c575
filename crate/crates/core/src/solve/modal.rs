use nalgebra::{DMatrix, SymmetricEigen};

use super::statics::StaticSolver;
use crate::error::{Error, Result};
use crate::fem::ReducedSystem;
use crate::sparse::{CsrMatrix, SparseLu};

/// One eigenpair; `shape` lives on the free displacement DOFs and is
/// mass-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub frequency: f64,
    pub shape: Vec<f64>,
}

const DENSE_LIMIT: usize = 3000;
const MAX_ITERATIONS: usize = 200;
const EIG_TOL: f64 = 1e-10;

/// Lowest `n_modes` natural frequencies (Hz), ascending.
///
/// With `include_piezo` the potential DOFs are condensed statically with the
/// electrode grounded, giving the effective stiffness `K + Lᵀ A⁻¹ L`.
/// Otherwise the piezo layer contributes only its elastic stiffness and mass.
pub fn solve_modal(sys: &ReducedSystem, young_modulus: f64, n_modes: usize, include_piezo: bool) -> Result<Vec<Mode>> {
    if n_modes == 0 {
        return Err(Error::invalid("n_modes", "must be at least 1"));
    }
    let nu = sys.n_u();
    if n_modes > nu {
        return Err(Error::invalid("n_modes", format!("exceeds {nu} free DOFs")));
    }
    let k = sys.stiffness(young_modulus);
    let coupled = include_piezo && sys.n_p() > 0;
    let (lambda, shapes) = if nu < DENSE_LIMIT {
        dense_modes(sys, &k, coupled, n_modes)?
    } else {
        let operator = if coupled {
            ShiftInvert::Coupled(StaticSolver::new(sys, &k)?, sys.n_p())
        } else {
            ShiftInvert::Plain(SparseLu::new(&k)?)
        };
        subspace_iteration(&sys.mass, &operator, n_modes)?
    };
    Ok(lambda
        .into_iter()
        .zip(shapes)
        .map(|(l, shape)| Mode {
            frequency: l.max(0.0).sqrt() / (2.0 * std::f64::consts::PI),
            shape,
        })
        .collect())
}

enum ShiftInvert {
    Plain(SparseLu),
    Coupled(StaticSolver, usize),
}

impl ShiftInvert {
    /// `K_eff⁻¹ f`.
    fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        match self {
            ShiftInvert::Plain(lu) => Ok(lu.solve(f)),
            ShiftInvert::Coupled(s, np) => s.solve(f, &vec![0.0; *np]).map(|(u, _)| u),
        }
    }
}

fn dense_modes(sys: &ReducedSystem, k: &CsrMatrix, coupled: bool, n_modes: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let nu = sys.n_u();
    let mut keff = k.to_dense();
    if coupled {
        let lu = SparseLu::new(&sys.potential)?;
        let np = sys.n_p();
        let l = sys.coupling.to_dense();
        let mut x: Vec<f64> = l.as_slice().to_vec();
        lu.solve_many_in_place(&mut x, nu);
        let ainv_l = DMatrix::from_column_slice(np, nu, &x);
        keff += l.transpose() * ainv_l;
    }
    let keff = (&keff + keff.transpose()) * 0.5;
    let m = sys.mass.to_dense();
    let (lambda, vecs) = generalized_eigen(&keff, &m)?;
    let shapes = (0..n_modes).map(|j| vecs.column(j).iter().copied().collect()).collect();
    Ok((lambda[..n_modes].to_vec(), shapes))
}

/// Symmetric-definite pencil `(K, M)` via Cholesky of `M`; eigenvalues ascending,
/// vectors M-orthonormal.
fn generalized_eigen(k: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization("mass matrix not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Factorization("mass factor singular".into()))?;
    let c = &linv * k * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let z = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    let x = linv.transpose() * z;
    Ok((lambda, x))
}

fn subspace_iteration(m: &CsrMatrix, op: &ShiftInvert, n_modes: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = m.nrows();
    let block = (2 * n_modes).max(n_modes + 8).min(n);
    // Deterministic start: smooth, linearly independent columns.
    let mut x: Vec<Vec<f64>> = (0..block)
        .map(|j| (0..n).map(|i| ((i + 1) as f64 * (j + 1) as f64 * 0.618_033_988_7).sin() + if j == 0 { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut prev = vec![f64::INFINITY; n_modes];
    for _ in 0..MAX_ITERATIONS {
        let mx: Vec<Vec<f64>> = x.iter().map(|v| m.mul_vec(v)).collect();
        let y: Vec<Vec<f64>> = mx.iter().map(|f| op.apply(f)).collect::<Result<_>>()?;
        let my: Vec<Vec<f64>> = y.iter().map(|v| m.mul_vec(v)).collect();
        let kr = DMatrix::from_fn(block, block, |a, b| crate::sparse::dot(&y[a], &mx[b]));
        let kr = (&kr + kr.transpose()) * 0.5;
        let mr = DMatrix::from_fn(block, block, |a, b| crate::sparse::dot(&y[a], &my[b]));
        let mr = (&mr + mr.transpose()) * 0.5;
        let (lambda, z) = generalized_eigen(&kr, &mr)?;
        x = (0..block)
            .map(|c| {
                let mut v = vec![0.0; n];
                for (r, yr) in y.iter().enumerate() {
                    let w = z[(r, c)];
                    for (vi, yi) in v.iter_mut().zip(yr) {
                        *vi += w * yi;
                    }
                }
                v
            })
            .collect();
        let done = lambda[..n_modes]
            .iter()
            .zip(&prev)
            .all(|(l, p)| (l - p).abs() <= EIG_TOL * l.abs());
        if done {
            return Ok((lambda[..n_modes].to_vec(), x.into_iter().take(n_modes).collect()));
        }
        prev.copy_from_slice(&lambda[..n_modes]);
    }
    Err(Error::EigenNotConverged {
        iterations: MAX_ITERATIONS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, AssemblyOptions, Materials};
    use crate::mesh::{generate_beam_mesh, AssemblyGeometry, MeshResolution};
    use crate::sparse::dot;

    #[test]
    fn dense_and_subspace_agree() {
        let mesh = generate_beam_mesh(&AssemblyGeometry::default(), &MeshResolution::coarse(), 1).unwrap();
        let sys = assemble(&mesh, &Materials::default(), &AssemblyOptions::default()).unwrap().reduce();
        let k = sys.stiffness(189e9);
        let (dense, _) = dense_modes(&sys, &k, false, 3).unwrap();
        let op = ShiftInvert::Plain(SparseLu::new(&k).unwrap());
        let (sub, shapes) = subspace_iteration(&sys.mass, &op, 3).unwrap();
        for (a, b) in dense.iter().zip(&sub) {
            assert!((a - b).abs() <= 1e-8 * a, "{a} vs {b}");
        }
        for s in &shapes {
            let mm = dot(s, &sys.mass.mul_vec(s));
            assert!((mm - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn frequencies_ascend_and_shapes_are_mass_normal() {
        let mesh = generate_beam_mesh(&AssemblyGeometry::default(), &MeshResolution::coarse(), 1).unwrap();
        let sys = assemble(&mesh, &Materials::default(), &AssemblyOptions::default()).unwrap().reduce();
        let modes = solve_modal(&sys, 189e9, 4, false).unwrap();
        assert!(modes.windows(2).all(|w| w[0].frequency <= w[1].frequency));
        for m in &modes {
            approx::assert_relative_eq!(dot(&m.shape, &sys.mass.mul_vec(&m.shape)), 1.0, max_relative = 1e-8);
        }
    }
}
