use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{FRAC_PI_4, PI};

use super::{cross, dot, sub, AssemblyGeometry, PointTag, Region, SurfaceTag, TaggedMesh};
use crate::error::{Error, Result};
use crate::fem::shape::{signed_volume, TET_EDGES, TET_FACES};

/// Cell counts of the structured parts of the assembly mesh.
///
/// The across-width resolution is fixed by the disc polygon: each side of the
/// square block around the disc carries `disc_polygon_sides / 4` segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshResolution {
    /// Target number of cells along the meshed beam length.
    pub length_cells: usize,
    /// Layers through the beam thickness.
    pub thickness_layers: usize,
    /// Layers through the disc thickness.
    pub disc_layers: usize,
    /// Concentric polygon rings inside the disc (including its rim).
    pub disc_rings: usize,
    /// Rings between the disc rim and the surrounding square block.
    pub annulus_layers: usize,
}

impl Default for MeshResolution {
    fn default() -> Self {
        Self {
            length_cells: 40,
            thickness_layers: 3,
            disc_layers: 3,
            disc_rings: 2,
            annulus_layers: 2,
        }
    }
}

impl MeshResolution {
    /// Smallest resolution accepted by the generator.
    pub fn coarse() -> Self {
        Self {
            length_cells: 12,
            thickness_layers: 2,
            disc_layers: 1,
            disc_rings: 1,
            annulus_layers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thickness_layers < 2 {
            return Err(Error::invalid("thickness_layers", "at least 2 layers are required"));
        }
        for (name, v) in [
            ("length_cells", self.length_cells),
            ("disc_layers", self.disc_layers),
            ("disc_rings", self.disc_rings),
            ("annulus_layers", self.annulus_layers),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Every count doubled.
    pub fn refined(&self) -> Self {
        Self {
            length_cells: 2 * self.length_cells,
            thickness_layers: 2 * self.thickness_layers,
            disc_layers: 2 * self.disc_layers,
            disc_rings: 2 * self.disc_rings,
            annulus_layers: 2 * self.annulus_layers,
        }
    }
}

/// Beam with the disc sensor bonded to its top face.
pub fn generate_assembly_mesh(geom: &AssemblyGeometry, res: &MeshResolution, order: u8) -> Result<TaggedMesh> {
    build(geom, res, order, true)
}

/// The same beam discretization without the disc volume.
pub fn generate_beam_mesh(geom: &AssemblyGeometry, res: &MeshResolution, order: u8) -> Result<TaggedMesh> {
    build(geom, res, order, false)
}

/// Planar triangulation with coordinate-based node merging.
struct TopFace {
    nodes: Vec<[f64; 2]>,
    lookup: HashMap<(i64, i64), usize>,
    tris: Vec<[usize; 3]>,
    in_disc: Vec<bool>,
    tol: f64,
}

impl TopFace {
    fn new(tol: f64) -> Self {
        Self {
            nodes: Vec::new(),
            lookup: HashMap::new(),
            tris: Vec::new(),
            in_disc: Vec::new(),
            tol,
        }
    }

    fn node(&mut self, p: [f64; 2]) -> usize {
        let key = ((p[0] / self.tol).round() as i64, (p[1] / self.tol).round() as i64);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(&i) = self.lookup.get(&(key.0 + dx, key.1 + dy)) {
                    let q = self.nodes[i];
                    if (q[0] - p[0]).abs() <= self.tol && (q[1] - p[1]).abs() <= self.tol {
                        return i;
                    }
                }
            }
        }
        self.nodes.push(p);
        self.lookup.insert(key, self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    fn tri(&mut self, t: [usize; 3], disc: bool) {
        self.tris.push(t);
        self.in_disc.push(disc);
    }

    /// Quad `a b c d` in cyclic order, split along `a–c`.
    fn quad(&mut self, q: [usize; 4], disc: bool) {
        self.tri([q[0], q[1], q[2]], disc);
        self.tri([q[0], q[2], q[3]], disc);
    }

    fn block(&mut self, xs: &[f64], ys: &[f64]) {
        let ids: Vec<Vec<usize>> = xs.iter().map(|&x| ys.iter().map(|&y| self.node([x, y])).collect()).collect();
        for i in 0..xs.len() - 1 {
            for j in 0..ys.len() - 1 {
                self.quad([ids[i][j], ids[i + 1][j], ids[i + 1][j + 1], ids[i][j + 1]], false);
            }
        }
    }
}

/// Uniform grid on `[x0, x1]` with interior lines moved onto `pins`.
fn axis_nodes(x0: f64, x1: f64, dx: f64, pins: &[f64]) -> Vec<f64> {
    let n = ((x1 - x0) / dx).round().max(1.0) as usize;
    let mut xs: Vec<f64> = (0..=n).map(|i| x0 + (x1 - x0) * i as f64 / n as f64).collect();
    xs[n] = x1;
    let mut moved = vec![false; n + 1];
    for &p in pins {
        if p <= x0 || p >= x1 {
            continue;
        }
        let i = ((p - x0) / (x1 - x0) * n as f64).round() as usize;
        if i == 0 || i == n || moved[i] {
            continue;
        }
        xs[i] = p;
        moved[i] = true;
    }
    xs
}

fn build(geom: &AssemblyGeometry, res: &MeshResolution, order: u8, with_disc: bool) -> Result<TaggedMesh> {
    geom.validate()?;
    res.validate()?;
    if order != 1 && order != 2 {
        return Err(Error::invalid("order", "must be 1 or 2"));
    }
    let beam = &geom.beam;
    let (l, w, h) = (beam.active_length, beam.width, beam.thickness);
    let x_min = -geom.clamped_overhang;
    let half = 0.5 * w;
    let xc = geom.disc_center_x;
    if xc - half < 0.0 {
        return Err(Error::MeshGeneration(
            "disc block overlaps the clamped part of the beam".into(),
        ));
    }
    let n = geom.disc_polygon_sides;
    let q = n / 4;
    let big_r = geom.polygon_circumradius();
    let dx = (l - x_min) / res.length_cells as f64;

    let mut face = TopFace::new(1e-7 * w);

    // Square block around the disc: polygon, annulus rings, square rim.
    let square = |k: usize| -> [f64; 2] {
        let side = k / q;
        let t = (k % q) as f64 / q as f64;
        let s = 2.0 * half * t;
        let (x, y) = match side {
            0 => (half - s, half),
            1 => (-half, half - s),
            2 => (-half + s, -half),
            _ => (half, -half + s),
        };
        [xc + x, y]
    };
    let polygon = |r: f64, k: usize| -> [f64; 2] {
        let a = FRAC_PI_4 + 2.0 * PI * k as f64 / n as f64;
        [xc + r * a.cos(), r * a.sin()]
    };
    let mut rings: Vec<Vec<usize>> = Vec::new();
    for j in 0..=res.annulus_layers {
        let s = j as f64 / res.annulus_layers as f64;
        let ring = (0..n)
            .map(|k| {
                let (p, o) = (polygon(big_r, k), square(k));
                face.node([p[0] + s * (o[0] - p[0]), p[1] + s * (o[1] - p[1])])
            })
            .collect();
        rings.push(ring);
    }
    for j in 0..res.annulus_layers {
        for k in 0..n {
            let k1 = (k + 1) % n;
            face.quad([rings[j][k], rings[j][k1], rings[j + 1][k1], rings[j + 1][k]], false);
        }
    }
    let mut inner: Vec<Vec<usize>> = Vec::new();
    for i in 1..=res.disc_rings {
        let r = big_r * i as f64 / res.disc_rings as f64;
        inner.push((0..n).map(|k| face.node(polygon(r, k))).collect());
    }
    for i in 0..res.disc_rings - 1 {
        for k in 0..n {
            let k1 = (k + 1) % n;
            face.quad([inner[i][k], inner[i][k1], inner[i + 1][k1], inner[i + 1][k]], true);
        }
    }
    let centre = face.node([xc, 0.0]);
    for k in 0..n {
        face.tri([centre, inner[0][k], inner[0][(k + 1) % n]], true);
    }

    // Structured blocks left and right of the square, sharing its y-nodes.
    let ys: Vec<f64> = (0..=q).map(|j| -half + w * j as f64 / q as f64).collect();
    let mut pins = vec![geom.laser_point_x, geom.weight_point_x];
    if x_min < 0.0 {
        pins.push(0.0);
    }
    if xc - half > x_min {
        face.block(&axis_nodes(x_min, xc - half, dx, &pins), &ys);
    }
    if xc + half < l {
        face.block(&axis_nodes(xc + half, l, dx, &pins), &ys);
    }

    // Extrusion.
    let n2 = face.nodes.len();
    let nt = res.thickness_layers;
    let nd = res.disc_layers;
    let t = geom.disc_thickness;
    let mut vertices: Vec<[f64; 3]> = Vec::with_capacity(n2 * (nt + 1));
    for lev in 0..=nt {
        let z = h * lev as f64 / nt as f64;
        vertices.extend(face.nodes.iter().map(|p| [p[0], p[1], z]));
    }
    let mut footprint_index = vec![usize::MAX; n2];
    let mut footprint = Vec::new();
    if with_disc {
        for (tri, &d) in face.tris.iter().zip(&face.in_disc) {
            if d {
                for &v in tri {
                    footprint_index[v] = 0;
                }
            }
        }
        for (i, slot) in footprint_index.iter_mut().enumerate() {
            if *slot == 0 {
                *slot = footprint.len();
                footprint.push(i);
            }
        }
        for m in 1..=nd {
            let z = h + t * m as f64 / nd as f64;
            vertices.extend(footprint.iter().map(|&i| [face.nodes[i][0], face.nodes[i][1], z]));
        }
    }
    let nf = footprint.len();
    let disc_base = n2 * (nt + 1);
    let beam_id = |lev: usize, i: usize| lev * n2 + i;
    let disc_id = |m: usize, i: usize| {
        if m == 0 {
            beam_id(nt, i)
        } else {
            disc_base + (m - 1) * nf + footprint_index[i]
        }
    };

    let mut cells: Vec<Vec<usize>> = Vec::new();
    let mut regions = Vec::new();
    let mut push_prism = |tri: &[usize; 3], bottom: &dyn Fn(usize) -> usize, top: &dyn Fn(usize) -> usize, region: Region| {
        let mut s = *tri;
        s.sort_unstable();
        let [a, b, c] = s;
        for tet in [
            [bottom(a), bottom(b), bottom(c), top(c)],
            [bottom(a), bottom(b), top(b), top(c)],
            [bottom(a), top(a), top(b), top(c)],
        ] {
            let mut tet = tet;
            if signed_volume(&tet.map(|v| vertices[v])) < 0.0 {
                tet.swap(2, 3);
            }
            cells.push(tet.to_vec());
            regions.push(region);
        }
    };
    for tri in &face.tris {
        for lev in 0..nt {
            push_prism(tri, &|i| beam_id(lev, i), &|i| beam_id(lev + 1, i), Region::Elastic);
        }
    }
    if with_disc {
        for (tri, &d) in face.tris.iter().zip(&face.in_disc) {
            if d {
                for m in 0..nd {
                    push_prism(tri, &|i| disc_id(m, i), &|i| disc_id(m + 1, i), Region::Piezo);
                }
            }
        }
    }

    // Boundary tags.
    let ztol = 1e-9 * h;
    let xtol = 1e-9 * l;
    let mut face_count: HashMap<[usize; 3], usize> = HashMap::new();
    for c in &cells {
        for f in TET_FACES {
            let mut key = f.map(|i| c[i]);
            key.sort_unstable();
            *face_count.entry(key).or_default() += 1;
        }
    }
    let mut surfaces: BTreeMap<SurfaceTag, Vec<[usize; 3]>> = BTreeMap::new();
    for (ci, c) in cells.iter().enumerate() {
        for (k, f) in TET_FACES.iter().enumerate() {
            let corners = f.map(|i| c[i]);
            let p = corners.map(|v| vertices[v]);
            let mut key = corners;
            key.sort_unstable();
            let boundary = face_count[&key] == 1;
            let tag = match regions[ci] {
                Region::Elastic if boundary && p.iter().all(|v| v[0] <= xtol) => Some(SurfaceTag::GammaU),
                Region::Piezo if p.iter().all(|v| (v[2] - h).abs() <= ztol) => Some(SurfaceTag::GammaP0),
                Region::Piezo if boundary && p.iter().all(|v| (v[2] - h - t).abs() <= ztol) => {
                    Some(SurfaceTag::GammaPQ)
                }
                _ => None,
            };
            if let Some(tag) = tag {
                let mut oriented = corners;
                let nrm = cross(sub(p[1], p[0]), sub(p[2], p[0]));
                if dot(nrm, sub(vertices[c[k]], p[0])) > 0.0 {
                    oriented.swap(1, 2);
                }
                surfaces.entry(tag).or_default().push(oriented);
            }
        }
    }
    if with_disc {
        for tag in [SurfaceTag::GammaP0, SurfaceTag::GammaPQ] {
            if surfaces.get(&tag).is_none_or(|f| f.is_empty()) {
                return Err(Error::MeshGeneration(format!("non-conforming disc interface: no {tag} facets")));
            }
        }
    }

    // Observation points snap to the nearest face vertex on y = 0.
    let nearest = |lev: usize, x: f64| -> usize {
        (0..n2)
            .min_by(|&i, &j| {
                let di = (face.nodes[i][0] - x).powi(2) + face.nodes[i][1].powi(2);
                let dj = (face.nodes[j][0] - x).powi(2) + face.nodes[j][1].powi(2);
                di.total_cmp(&dj)
            })
            .map(|i| beam_id(lev, i))
            .expect("face has nodes")
    };
    let mut points = BTreeMap::new();
    let laser = nearest(nt, geom.laser_point_x);
    if with_disc && footprint_index[laser - beam_id(nt, 0)] != usize::MAX {
        let on_rim = {
            let p = vertices[laser];
            ((p[0] - xc).powi(2) + p[1].powi(2)).sqrt() >= big_r * (PI / n as f64).cos() - 1e-9 * w
        };
        if !on_rim {
            return Err(Error::MeshGeneration("laser point lies under the disc".into()));
        }
    }
    points.insert(PointTag::L, laser);
    points.insert(PointTag::W, nearest(0, geom.weight_point_x));

    if order == 2 {
        elevate(&mut vertices, &mut cells);
    }
    TaggedMesh::new(vertices, order, cells, regions, surfaces, points)
}

/// Append mid-edge nodes, turning 4-node cells into 10-node cells.
fn elevate(vertices: &mut Vec<[f64; 3]>, cells: &mut [Vec<usize>]) {
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    for c in cells.iter_mut() {
        for &(a, b) in &TET_EDGES {
            let (va, vb) = (c[a], c[b]);
            let key = (va.min(vb), va.max(vb));
            let id = *edges.entry(key).or_insert_with(|| {
                let (pa, pb) = (vertices[va], vertices[vb]);
                vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]), 0.5 * (pa[2] + pb[2])]);
                vertices.len() - 1
            });
            c.push(id);
        }
    }
}

/// Box `[0, size]` split into `cells` hexahedra of six tetrahedra each, all
/// ELASTIC, clamped on `x = 0`.
pub fn generate_box_mesh(size: [f64; 3], cells: [usize; 3], order: u8) -> Result<TaggedMesh> {
    if size.iter().any(|&s| !(s > 0.0)) || cells.iter().any(|&c| c == 0) {
        return Err(Error::invalid("box", "sizes and cell counts must be positive"));
    }
    let [nx, ny, nz] = cells;
    let id = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([
                    size[0] * i as f64 / nx as f64,
                    size[1] * j as f64 / ny as f64,
                    size[2] * k as f64 / nz as f64,
                ]);
            }
        }
    }
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let v = [
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ];
                for [a, b, c] in [[1, 2, 6], [2, 3, 6], [3, 7, 6], [7, 4, 6], [4, 5, 6], [5, 1, 6]] {
                    let mut tet = [v[0], v[a], v[b], v[c]];
                    if signed_volume(&tet.map(|x| vertices[x])) < 0.0 {
                        tet.swap(2, 3);
                    }
                    tets.push(tet.to_vec());
                }
            }
        }
    }
    let mut surfaces = BTreeMap::new();
    let mut clamp = Vec::new();
    for c in &tets {
        for (k, f) in TET_FACES.iter().enumerate() {
            let mut corners = f.map(|i| c[i]);
            let p = corners.map(|v| vertices[v]);
            if p.iter().all(|v| v[0] == 0.0) {
                let nrm = cross(sub(p[1], p[0]), sub(p[2], p[0]));
                if dot(nrm, sub(vertices[c[k]], p[0])) > 0.0 {
                    corners.swap(1, 2);
                }
                clamp.push(corners);
            }
        }
    }
    surfaces.insert(SurfaceTag::GammaU, clamp);
    let regions = vec![Region::Elastic; tets.len()];
    if order == 2 {
        elevate(&mut vertices, &mut tets);
    }
    TaggedMesh::new(vertices, order, tets, regions, surfaces, BTreeMap::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box_is_six_tets() {
        let m = generate_box_mesh([1.0; 3], [1, 1, 1], 1).unwrap();
        assert_eq!(m.n_cells(), 6);
        assert!(m.regions().iter().all(|&r| r == Region::Elastic));
        assert!((m.region_volume(Region::Elastic) - 1.0).abs() < 1e-14);
        assert_eq!(m.facets(SurfaceTag::GammaU).len(), 2);
    }

    #[test]
    fn box_refinement_keeps_volume() {
        let a = generate_box_mesh([0.3, 0.2, 0.1], [2, 2, 2], 2).unwrap();
        let b = generate_box_mesh([0.3, 0.2, 0.1], [4, 4, 4], 2).unwrap();
        let (va, vb) = (a.region_volume(Region::Elastic), b.region_volume(Region::Elastic));
        assert!(((va - vb) / va).abs() < 1e-12);
        assert!(((va - 0.006) / 0.006).abs() < 1e-12);
    }

    #[test]
    fn default_assembly_scale() {
        let m = generate_assembly_mesh(&AssemblyGeometry::default(), &MeshResolution::default(), 1).unwrap();
        let nv = m.n_corner_vertices();
        let nc = m.n_cells();
        assert!((707..=6363).contains(&nv), "{nv} vertices");
        assert!((2192..=19731).contains(&nc), "{nc} cells");
    }

    #[test]
    fn disc_volume_matches_circle() {
        let g = AssemblyGeometry::default();
        let m = generate_assembly_mesh(&g, &MeshResolution::coarse(), 1).unwrap();
        let n = g.disc_polygon_sides as f64;
        let r = g.polygon_circumradius();
        let polygon = r * r * n / 2.0 * (2.0 * PI / n).sin() * g.disc_thickness;
        let circle = PI * g.disc_radius.powi(2) * g.disc_thickness;
        let v = m.region_volume(Region::Piezo);
        assert!(((v - polygon) / polygon).abs() < 1e-12);
        assert!(((v - circle) / circle).abs() < 1.0 - (PI / n).cos());
    }

    #[test]
    fn electrodes_have_disc_area() {
        let g = AssemblyGeometry::default();
        let m = generate_assembly_mesh(&g, &MeshResolution::coarse(), 2).unwrap();
        let disc = PI * g.disc_radius.powi(2);
        for tag in [SurfaceTag::GammaP0, SurfaceTag::GammaPQ] {
            assert!(((m.surface_area(tag) - disc) / disc).abs() < 1e-12, "{tag}");
        }
        let clamp = g.beam.width * g.beam.thickness;
        assert!(((m.surface_area(SurfaceTag::GammaU) - clamp) / clamp).abs() < 1e-12);
    }

    #[test]
    fn points_snap_to_requested_positions() {
        let g = AssemblyGeometry::default();
        let m = generate_assembly_mesh(&g, &MeshResolution::default(), 2).unwrap();
        let l = m.vertices()[m.point(PointTag::L).unwrap()];
        let w = m.vertices()[m.point(PointTag::W).unwrap()];
        assert!((l[0] - g.laser_point_x).abs() < 1e-12 && l[1].abs() < 1e-12);
        assert!((l[2] - g.beam.thickness).abs() < 1e-12);
        assert!((w[0] - g.weight_point_x).abs() < 1e-12 && w[2].abs() < 1e-12);
    }

    #[test]
    fn oversized_disc_rejected() {
        let g = AssemblyGeometry {
            disc_radius: 9.9e-3,
            ..Default::default()
        };
        assert!(generate_assembly_mesh(&g, &MeshResolution::coarse(), 1).is_err());
        let g = AssemblyGeometry {
            disc_center_x: 100e-3,
            ..Default::default()
        };
        assert!(generate_assembly_mesh(&g, &MeshResolution::coarse(), 1).is_err());
    }

    #[test]
    fn beam_mesh_has_no_disc() {
        let m = generate_beam_mesh(&AssemblyGeometry::default(), &MeshResolution::coarse(), 2).unwrap();
        assert!(!m.has_region(Region::Piezo));
        assert!(m.facets(SurfaceTag::GammaPQ).is_empty());
        let b = AssemblyGeometry::default().beam;
        let v = b.active_length * b.width * b.thickness;
        assert!(((m.region_volume(Region::Elastic) - v) / v).abs() < 1e-12);
    }

    #[test]
    fn overhang_is_clamped_on_its_surface() {
        let g = AssemblyGeometry {
            clamped_overhang: 10e-3,
            ..Default::default()
        };
        let m = generate_beam_mesh(&g, &MeshResolution::coarse(), 1).unwrap();
        let (lo, _) = m.bounding_box();
        assert!((lo[0] + 10e-3).abs() < 1e-12);
        assert!(m.facets(SurfaceTag::GammaU).len() > 2);
    }

    #[test]
    fn quadratic_cells_have_ten_nodes() {
        let m = generate_assembly_mesh(&AssemblyGeometry::default(), &MeshResolution::coarse(), 2).unwrap();
        assert_eq!(m.nodes_per_cell(), 10);
        assert!(m.n_vertices() > m.n_corner_vertices());
    }
}
