use nalgebra::{Matrix6, Vector3, Vector6};

use super::assembly::{AssembledSystem, Materials, ReducedSystem};
use super::shape::{self, TetGeometry};
use crate::error::{Error, Result};
use crate::mesh::{Region, TaggedMesh};
use crate::model::{isotropic_stiffness_voigt, ParameterSet};
use crate::solve::StateVector;
use crate::sparse::{dot, CsrMatrix};

/// Charges `(Q_pQ, Q_p0)` on the free and grounded electrodes for full
/// displacement and potential vectors.
pub fn electrode_charge(sys: &AssembledSystem, u: &[f64], p: &[f64]) -> (f64, f64) {
    let ones = vec![1.0; sys.p_space.n_dofs()];
    let qu = sys.flux_u.tr_mul_vec(&ones);
    let qp = sys.flux_p.tr_mul_vec(&ones);
    let free = dot(&qu, u) - dot(&qp, p);
    let ground = dot(&sys.ground_charge_u, u) - dot(&sys.ground_charge_p, p);
    (free, ground)
}

/// Energies (J) and dissipated powers (W) of one state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyAudit {
    pub kinetic: f64,
    pub strain: f64,
    pub electric: f64,
    pub rayleigh_power: f64,
    pub circuit_power: f64,
}

impl EnergyAudit {
    /// `kinetic + strain + electric`.
    pub fn total(&self) -> f64 {
        self.kinetic + self.strain + self.electric
    }
}

/// `stiffness` must be `sys.stiffness(theta.young_modulus())`; it is passed
/// in so that per-step audits do not rebuild it.
pub fn energy_audit(sys: &ReducedSystem, stiffness: &CsrMatrix, theta: &ParameterSet, state: &StateVector) -> EnergyAudit {
    let mv = sys.mass.mul_vec(&state.u_dot);
    let vmv = dot(&state.u_dot, &mv);
    let kv = stiffness.bilinear(&state.u_dot, &state.u_dot);
    let d = theta.damping();
    let c = theta.circuit();
    EnergyAudit {
        kinetic: 0.5 * vmv,
        strain: 0.5 * stiffness.bilinear(&state.u, &state.u),
        electric: 0.5 * sys.dielectric.bilinear(&state.p, &state.p),
        rayleigh_power: d.alpha * vmv + d.beta * kv,
        circuit_power: state.p_bar * state.p_bar / c.resistance + c.capacitance * state.p_bar * state.p_bar_dot,
    }
}

/// Von Mises equivalent of a Voigt stress `[xx, yy, zz, yz, xz, xy]`.
pub fn von_mises(s: &Vector6<f64>) -> f64 {
    let d = (s[0] - s[1]).powi(2) + (s[1] - s[2]).powi(2) + (s[2] - s[0]).powi(2);
    (0.5 * d + 3.0 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5])).sqrt()
}

/// Nodal von Mises stress, averaged over the cells sharing each node.
///
/// `u` holds one displacement per mesh node; `potential`, if given, one
/// potential per mesh node and adds the converse piezo stress `eᵀ∇φ`.
pub fn nodal_von_mises(
    mesh: &TaggedMesh,
    materials: &Materials,
    u: &[[f64; 3]],
    potential: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let nv = mesh.n_vertices();
    if u.len() != nv || potential.is_some_and(|p| p.len() != nv) {
        return Err(Error::Dimension(format!("nodal fields must have {nv} entries")));
    }
    let elastic = isotropic_stiffness_voigt(&materials.beam)?;
    let order = mesh.order();
    let n = mesh.nodes_per_cell();
    let mut sum = vec![0.0; nv];
    let mut count = vec![0usize; nv];
    for c in 0..mesh.n_cells() {
        let geom = TetGeometry::new(&mesh.cell_corners(c))?;
        let nodes = mesh.cell(c);
        let piezo = mesh.region(c) == Region::Piezo;
        let cmat: Matrix6<f64> = if piezo { materials.piezo.stiffness_voigt } else { elastic };
        for (a, &node) in nodes.iter().enumerate() {
            let l = node_bary(a);
            let grads = geom.gradients(order, &l);
            let mut strain = Vector6::zeros();
            let mut field = Vector3::zeros();
            for b in 0..n {
                strain += shape::strain_block(&grads[b]) * Vector3::from(u[nodes[b]]);
                if let Some(p) = potential {
                    field += grads[b] * p[nodes[b]];
                }
            }
            let mut stress = cmat * strain;
            if piezo {
                stress += materials.piezo.coupling_voigt.transpose() * field;
            }
            sum[node] += von_mises(&stress);
            count[node] += 1;
        }
    }
    Ok(sum.iter().zip(&count).map(|(s, &k)| if k > 0 { s / k as f64 } else { 0.0 }).collect())
}

/// Barycentric coordinates of local node `a` (corners, then edge midpoints).
fn node_bary(a: usize) -> [f64; 4] {
    let mut l = [0.0; 4];
    if a < 4 {
        l[a] = 1.0;
    } else {
        let (i, j) = shape::TET_EDGES[a - 4];
        l[i] = 0.5;
        l[j] = 0.5;
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, AssemblyOptions};
    use crate::mesh::{generate_assembly_mesh, generate_box_mesh, AssemblyGeometry, MeshResolution};
    use crate::model::ElasticMaterial;

    #[test]
    fn uniaxial_stress_has_unit_von_mises() {
        let mesh = generate_box_mesh([2.0, 1.0, 1.0], [2, 1, 1], 2).unwrap();
        let beam = ElasticMaterial::new(200.0, 0.3, 1.0).unwrap();
        let materials = Materials {
            beam,
            ..Materials::default()
        };
        let u: Vec<[f64; 3]> = mesh
            .vertices()
            .iter()
            .map(|x| [x[0] / 200.0, -0.3 * x[1] / 200.0, -0.3 * x[2] / 200.0])
            .collect();
        let vm = nodal_von_mises(&mesh, &materials, &u, None).unwrap();
        assert!(vm.iter().all(|v| (v - 1.0).abs() < 1e-12), "{vm:?}");
    }

    #[test]
    fn zero_state_has_zero_charge_and_energy() {
        let mesh = generate_assembly_mesh(&AssemblyGeometry::default(), &MeshResolution::coarse(), 1).unwrap();
        let sys = assemble(&mesh, &Materials::default(), &AssemblyOptions::default()).unwrap();
        let u = vec![0.0; sys.u_space.n_dofs()];
        let p = vec![0.0; sys.p_space.n_dofs()];
        assert_eq!(electrode_charge(&sys, &u, &p), (0.0, 0.0));
        // Uniform potential carries no flux.
        let (a, b) = electrode_charge(&sys, &u, &vec![3.0; p.len()]);
        assert!(a.abs() < 1e-20 && b.abs() < 1e-20, "{a} {b}");

        let red = sys.reduce();
        let theta = ParameterSet::initial_guess();
        let k = red.stiffness(theta.young_modulus());
        let zero = StateVector::for_system(&red);
        assert_eq!(energy_audit(&red, &k, &theta, &zero), EnergyAudit::default());
        let mut s = zero.clone();
        s.u_dot = (0..red.n_u()).map(|i| (i as f64).cos()).collect();
        let e1 = energy_audit(&red, &k, &theta, &s).kinetic;
        s.u_dot.iter_mut().for_each(|v| *v *= 2.0);
        let e2 = energy_audit(&red, &k, &theta, &s).kinetic;
        assert_eq!(e2, 4.0 * e1);
    }
}
