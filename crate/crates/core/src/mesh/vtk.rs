use std::fmt::Write as _;
use std::path::Path;

use super::TaggedMesh;
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Point data attached to a VTK export.
#[derive(Debug, Clone)]
pub enum NodalField<'a> {
    Scalar(&'a str, &'a [f64]),
    Vector(&'a str, &'a [[f64; 3]]),
}

impl NodalField<'_> {
    fn len(&self) -> usize {
        match self {
            NodalField::Scalar(_, d) => d.len(),
            NodalField::Vector(_, d) => d.len(),
        }
    }

    fn name(&self) -> &str {
        match self {
            NodalField::Scalar(n, _) | NodalField::Vector(n, _) => n,
        }
    }
}

/// Legacy ASCII VTK unstructured grid with optional nodal fields. Cell
/// regions are written as the integer cell field `region`.
pub fn export_vtk(mesh: &TaggedMesh, fields: &[NodalField<'_>], path: impl AsRef<Path>) -> Result<()> {
    let n = mesh.n_vertices();
    for f in fields {
        if f.len() != n {
            return Err(Error::Dimension(format!(
                "field `{}` has {} values for {n} nodes",
                f.name(),
                f.len()
            )));
        }
        if f.name().is_empty() || f.name().contains(char::is_whitespace) {
            return Err(Error::invalid("field name", format!("`{}` is not a valid VTK name", f.name())));
        }
    }
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\npiezobeam mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {n} double");
    for v in mesh.vertices() {
        let _ = writeln!(s, "{:e} {:e} {:e}", v[0], v[1], v[2]);
    }
    let npc = mesh.nodes_per_cell();
    let nc = mesh.n_cells();
    let _ = writeln!(s, "CELLS {nc} {}", nc * (npc + 1));
    for i in 0..nc {
        let _ = write!(s, "{npc}");
        for v in mesh.cell(i) {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "CELL_TYPES {nc}");
    let cell_type = if mesh.order() == 1 { 10 } else { 24 };
    for _ in 0..nc {
        let _ = writeln!(s, "{cell_type}");
    }
    let _ = writeln!(s, "CELL_DATA {nc}\nSCALARS region int 1\nLOOKUP_TABLE default");
    for r in mesh.regions() {
        let _ = writeln!(s, "{}", *r as u8);
    }
    if !fields.is_empty() {
        let _ = writeln!(s, "POINT_DATA {n}");
    }
    for f in fields {
        match f {
            NodalField::Scalar(name, d) => {
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in *d {
                    let _ = writeln!(s, "{x:e}");
                }
            }
            NodalField::Vector(name, d) => {
                let _ = writeln!(s, "VECTORS {name} double");
                for x in *d {
                    let _ = writeln!(s, "{:e} {:e} {:e}", x[0], x[1], x[2]);
                }
            }
        }
    }
    write_atomic(path.as_ref(), s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_box_mesh;

    #[test]
    fn plain_mesh_has_points_and_cells() {
        let m = generate_box_mesh([1.0; 3], [1, 1, 1], 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.vtk");
        export_vtk(&m, &[], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains(&format!("POINTS {} double", m.n_vertices())));
        assert!(text.contains("CELLS 6 66"));
        assert!(text.lines().filter(|l| *l == "24").count() == 6);
    }

    #[test]
    fn vector_field_named_u() {
        let m = generate_box_mesh([1.0; 3], [1, 1, 1], 1).unwrap();
        let u = vec![[0.0, 0.0, 1.0]; m.n_vertices()];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.vtk");
        export_vtk(&m, &[NodalField::Vector("u", &u)], &p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("VECTORS u double"));
    }

    #[test]
    fn wrong_length_rejected() {
        let m = generate_box_mesh([1.0; 3], [1, 1, 1], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let r = export_vtk(&m, &[NodalField::Scalar("s", &[1.0])], dir.path().join("x.vtk"));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
