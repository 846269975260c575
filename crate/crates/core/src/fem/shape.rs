//! Lagrange shape functions on straight-sided tetrahedra.
//!
//! Local node order follows VTK: four corners, then the mid-edge nodes of
//! edges (0,1), (1,2), (0,2), (0,3), (1,3), (2,3).

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Local corner pairs of the six tetrahedron edges, in mid-node order.
pub const TET_EDGES: [(usize, usize); 6] = [(0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3)];

/// Local corner triples of the four faces; face `k` is opposite corner `k`.
pub const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

pub fn nodes_per_tet(order: u8) -> usize {
    match order {
        1 => 4,
        2 => 10,
        _ => panic!("unsupported order {order}"),
    }
}

/// Shape function values at barycentric point `l`; the first
/// `nodes_per_tet(order)` entries are meaningful.
pub fn values(order: u8, l: &[f64; 4]) -> [f64; 10] {
    let mut n = [0.0; 10];
    match order {
        1 => n[..4].copy_from_slice(l),
        _ => {
            for i in 0..4 {
                n[i] = l[i] * (2.0 * l[i] - 1.0);
            }
            for (k, &(i, j)) in TET_EDGES.iter().enumerate() {
                n[4 + k] = 4.0 * l[i] * l[j];
            }
        }
    }
    n
}

/// Derivatives `∂N_a/∂λ_i` of the shape functions w.r.t. the barycentric
/// coordinates (treated as independent).
pub fn bary_derivatives(order: u8, l: &[f64; 4]) -> [[f64; 4]; 10] {
    let mut d = [[0.0; 4]; 10];
    match order {
        1 => {
            for i in 0..4 {
                d[i][i] = 1.0;
            }
        }
        _ => {
            for i in 0..4 {
                d[i][i] = 4.0 * l[i] - 1.0;
            }
            for (k, &(i, j)) in TET_EDGES.iter().enumerate() {
                d[4 + k][i] = 4.0 * l[j];
                d[4 + k][j] = 4.0 * l[i];
            }
        }
    }
    d
}

/// Affine map data of one tetrahedron.
#[derive(Debug, Clone, Copy)]
pub struct TetGeometry {
    /// Determinant of the reference-to-physical Jacobian (six times the volume).
    pub det_j: f64,
    /// Constant gradients of the four barycentric coordinates.
    pub grad_bary: [Vector3<f64>; 4],
}

impl TetGeometry {
    pub fn new(corners: &[[f64; 3]; 4]) -> Result<Self> {
        let p0 = Vector3::from(corners[0]);
        let cols = [1, 2, 3].map(|k| Vector3::from(corners[k]) - p0);
        let j = Matrix3::from_columns(&cols);
        let det_j = j.determinant();
        let scale = cols.iter().map(|c| c.norm()).fold(0.0, f64::max).powi(3);
        if !(det_j.abs() > 1e-12 * scale) {
            return Err(Error::InvalidMesh(format!(
                "degenerate tetrahedron (det J = {det_j:e})"
            )));
        }
        let inv = j.try_inverse().expect("non-singular checked above");
        let g1 = inv.row(0).transpose();
        let g2 = inv.row(1).transpose();
        let g3 = inv.row(2).transpose();
        let g0 = -(g1 + g2 + g3);
        Ok(Self {
            det_j,
            grad_bary: [g0, g1, g2, g3],
        })
    }

    pub fn volume(&self) -> f64 {
        self.det_j.abs() / 6.0
    }

    /// Physical gradients of the shape functions at barycentric point `l`.
    pub fn gradients(&self, order: u8, l: &[f64; 4]) -> [Vector3<f64>; 10] {
        let d = bary_derivatives(order, l);
        let mut g = [Vector3::zeros(); 10];
        for a in 0..nodes_per_tet(order) {
            g[a] = (0..4).map(|i| self.grad_bary[i] * d[a][i]).sum();
        }
        g
    }
}

/// Signed volume of a tetrahedron.
pub fn signed_volume(c: &[[f64; 3]; 4]) -> f64 {
    let p0 = Vector3::from(c[0]);
    let a = Vector3::from(c[1]) - p0;
    let b = Vector3::from(c[2]) - p0;
    let d = Vector3::from(c[3]) - p0;
    a.cross(&b).dot(&d) / 6.0
}

/// Voigt strain-displacement block `[xx, yy, zz, yz, xz, xy]` for one node.
pub fn strain_block(g: &Vector3<f64>) -> nalgebra::SMatrix<f64, 6, 3> {
    #[rustfmt::skip]
    let b = nalgebra::SMatrix::<f64, 6, 3>::from_row_slice(&[
        g.x, 0.0, 0.0,
        0.0, g.y, 0.0,
        0.0, 0.0, g.z,
        0.0, g.z, g.y,
        g.z, 0.0, g.x,
        g.y, g.x, 0.0,
    ]);
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn node_bary(order: u8, a: usize) -> [f64; 4] {
        let mut l = [0.0; 4];
        if a < 4 {
            l[a] = 1.0;
        } else {
            assert_eq!(order, 2);
            let (i, j) = TET_EDGES[a - 4];
            l[i] = 0.5;
            l[j] = 0.5;
        }
        l
    }

    #[test]
    fn kronecker_property() {
        for order in [1u8, 2] {
            let n = nodes_per_tet(order);
            for a in 0..n {
                let v = values(order, &node_bary(order, a));
                for b in 0..n {
                    let expected = if a == b { 1.0 } else { 0.0 };
                    assert!((v[b] - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_and_zero_gradient_sum() {
        let geom = TetGeometry::new(&[[0.1, 0.0, 0.2], [1.3, 0.1, 0.0], [0.2, 0.9, 0.1], [0.3, 0.2, 1.4]]).unwrap();
        let l = [0.1, 0.2, 0.3, 0.4];
        for order in [1u8, 2] {
            let v = values(order, &l);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let g = geom.gradients(order, &l);
            let s: Vector3<f64> = g.iter().sum();
            assert!(s.norm() < 1e-13);
        }
    }

    #[test]
    fn gradients_reproduce_linear_field() {
        let c = [[0.1, 0.0, 0.2], [1.3, 0.1, 0.0], [0.2, 0.9, 0.1], [0.3, 0.2, 1.4]];
        let geom = TetGeometry::new(&c).unwrap();
        let f = |p: [f64; 3]| 2.0 * p[0] - 3.0 * p[1] + 0.5 * p[2] + 1.0;
        let mut nodal = vec![];
        for a in 0..10 {
            let l = node_bary(2, a);
            let p = [0, 1, 2].map(|k| (0..4).map(|i| l[i] * c[i][k]).sum::<f64>());
            nodal.push(f(p));
        }
        let g = geom.gradients(2, &[0.2, 0.3, 0.1, 0.4]);
        let grad: Vector3<f64> = (0..10).map(|a| g[a] * nodal[a]).sum();
        assert!((grad - Vector3::new(2.0, -3.0, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn unit_tet_volume() {
        let g = TetGeometry::new(&UNIT).unwrap();
        assert!((g.volume() - 1.0 / 6.0).abs() < 1e-15);
        assert!((signed_volume(&UNIT) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_rejected() {
        let flat = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert!(TetGeometry::new(&flat).is_err());
    }
}
