use crate::mesh::{Region, SurfaceTag, TaggedMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// Three displacement components per node.
    Vector3,
    /// One potential value per node.
    Scalar,
}

impl FieldKind {
    pub fn components(self) -> usize {
        match self {
            FieldKind::Vector3 => 3,
            FieldKind::Scalar => 1,
        }
    }
}

/// Degree-of-freedom map of a nodal Lagrange field on a mesh.
///
/// Full numbering covers every supported node; the free numbering drops
/// the Dirichlet-constrained DOFs (all with value zero here).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpace {
    kind: FieldKind,
    order: u8,
    node_first_dof: Vec<usize>,
    n_dofs: usize,
    full_to_free: Vec<usize>,
    free_to_full: Vec<usize>,
}

const NONE: usize = usize::MAX;

impl FieldSpace {
    /// Displacement on the whole mesh, clamped on `GAMMA_U`.
    pub fn displacement(mesh: &TaggedMesh) -> Self {
        Self::build(mesh, FieldKind::Vector3, |_| true, SurfaceTag::GammaU)
    }

    /// Potential on the PIEZO cells, grounded on `GAMMA_P0`.
    pub fn potential(mesh: &TaggedMesh) -> Self {
        Self::build(mesh, FieldKind::Scalar, |r| r == Region::Piezo, SurfaceTag::GammaP0)
    }

    fn build(mesh: &TaggedMesh, kind: FieldKind, keep: impl Fn(Region) -> bool, dirichlet: SurfaceTag) -> Self {
        let nc = kind.components();
        let mut node_first_dof = vec![NONE; mesh.n_vertices()];
        let mut n_dofs = 0;
        // Number nodes in ascending id order for a reproducible layout.
        let mut used = vec![false; mesh.n_vertices()];
        for c in 0..mesh.n_cells() {
            if keep(mesh.region(c)) {
                for &v in mesh.cell(c) {
                    used[v] = true;
                }
            }
        }
        for (v, &u) in used.iter().enumerate() {
            if u {
                node_first_dof[v] = n_dofs;
                n_dofs += nc;
            }
        }
        let mut constrained = vec![false; n_dofs];
        for v in mesh.surface_nodes(dirichlet) {
            if node_first_dof[v] != NONE {
                for k in 0..nc {
                    constrained[node_first_dof[v] + k] = true;
                }
            }
        }
        let mut full_to_free = vec![NONE; n_dofs];
        let mut free_to_full = Vec::with_capacity(n_dofs);
        for (d, &c) in constrained.iter().enumerate() {
            if !c {
                full_to_free[d] = free_to_full.len();
                free_to_full.push(d);
            }
        }
        Self {
            kind,
            order: mesh.order(),
            node_first_dof,
            n_dofs,
            full_to_free,
            free_to_full,
        }
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_free(&self) -> usize {
        self.free_to_full.len()
    }

    pub fn n_constrained(&self) -> usize {
        self.n_dofs - self.n_free()
    }

    /// Full DOF index of component `comp` at mesh node `node`.
    pub fn dof(&self, node: usize, comp: usize) -> Option<usize> {
        let first = *self.node_first_dof.get(node)?;
        (first != NONE && comp < self.kind.components()).then_some(first + comp)
    }

    pub fn free_index(&self, full: usize) -> Option<usize> {
        let f = self.full_to_free[full];
        (f != NONE).then_some(f)
    }

    pub fn is_constrained(&self, full: usize) -> bool {
        self.full_to_free[full] == NONE
    }

    /// Free → full index map.
    pub fn free_dofs(&self) -> &[usize] {
        &self.free_to_full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_to_full.iter().map(|&d| full[d]).collect()
    }

    /// Scatter free values into a full vector with zeros on constrained DOFs.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs];
        for (&d, &v) in self.free_to_full.iter().zip(free) {
            out[d] = v;
        }
        out
    }

    /// Per-node values of a full displacement vector (zero off the field).
    pub fn nodal_vectors(&self, full: &[f64]) -> Vec<[f64; 3]> {
        assert_eq!(self.kind, FieldKind::Vector3);
        (0..self.node_first_dof.len())
            .map(|v| match self.node_first_dof[v] {
                NONE => [0.0; 3],
                d => [full[d], full[d + 1], full[d + 2]],
            })
            .collect()
    }

    /// Per-node values of a full scalar vector (zero off the field).
    pub fn nodal_scalars(&self, full: &[f64]) -> Vec<f64> {
        assert_eq!(self.kind, FieldKind::Scalar);
        self.node_first_dof
            .iter()
            .map(|&d| if d == NONE { 0.0 } else { full[d] })
            .collect()
    }
}
