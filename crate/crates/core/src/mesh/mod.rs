//! Tagged tetrahedral meshes of the beam and disc assembly.
//!
//! Coordinates: `x` runs along the beam from the clamp, `y` across the
//! width (centred), `z` through the thickness with the beam occupying
//! `0 ≤ z ≤ h` and the disc sitting on the top face `z = h`.

mod generate;
mod io;
mod vtk;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

pub use generate::{generate_assembly_mesh, generate_beam_mesh, generate_box_mesh, MeshResolution};
pub use io::{load_mesh, save_mesh};
pub use vtk::{export_vtk, NodalField};

use crate::error::{Error, Result};
use crate::fem::shape::{nodes_per_tet, signed_volume, TET_EDGES, TET_FACES};
use crate::model::BeamGeometry;

/// Material region of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Elastic,
    Piezo,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Elastic => "ELASTIC",
            Region::Piezo => "PIEZO",
        }
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ELASTIC" => Ok(Region::Elastic),
            "PIEZO" => Ok(Region::Piezo),
            _ => Err(format!("unknown region `{s}`")),
        }
    }
}

/// Named boundary parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SurfaceTag {
    /// Clamped boundary of the beam.
    GammaU,
    /// Grounded bottom electrode of the disc.
    GammaP0,
    /// Floating top electrode of the disc.
    GammaPQ,
}

impl SurfaceTag {
    pub const ALL: [SurfaceTag; 3] = [SurfaceTag::GammaU, SurfaceTag::GammaP0, SurfaceTag::GammaPQ];

    pub fn name(self) -> &'static str {
        match self {
            SurfaceTag::GammaU => "GAMMA_U",
            SurfaceTag::GammaP0 => "GAMMA_P0",
            SurfaceTag::GammaPQ => "GAMMA_PQ",
        }
    }

    /// Region whose cells own facets with this tag.
    pub fn owner(self) -> Region {
        match self {
            SurfaceTag::GammaU => Region::Elastic,
            SurfaceTag::GammaP0 | SurfaceTag::GammaPQ => Region::Piezo,
        }
    }
}

impl FromStr for SurfaceTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        SurfaceTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown surface tag `{s}`"))
    }
}

/// Named observation points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointTag {
    /// Where the weight hangs (bottom face near the free end).
    W,
    /// Laser vibrometer spot (top face).
    L,
}

impl PointTag {
    pub fn name(self) -> &'static str {
        match self {
            PointTag::W => "W",
            PointTag::L => "L",
        }
    }
}

impl FromStr for PointTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "W" => Ok(PointTag::W),
            "L" => Ok(PointTag::L),
            _ => Err(format!("unknown point tag `{s}`")),
        }
    }
}

impl fmt::Display for SurfaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Boundary facet with outward orientation relative to its owning cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Facet {
    /// Corner vertex ids, ordered so that `(v1 − v0) × (v2 − v0)` points out.
    pub corners: [usize; 3],
    pub cell: usize,
    /// Local face index within the cell (face `k` is opposite corner `k`).
    pub local_face: usize,
}

/// Placement of the disc sensor, laser spot and weight on the strip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyGeometry {
    pub beam: BeamGeometry,
    /// Length of strip held in the clamp (meshed over `−overhang ≤ x ≤ 0`).
    pub clamped_overhang: f64,
    pub disc_radius: f64,
    pub disc_thickness: f64,
    pub disc_center_x: f64,
    pub laser_point_x: f64,
    pub weight_point_x: f64,
    pub disc_polygon_sides: usize,
}

impl Default for AssemblyGeometry {
    fn default() -> Self {
        Self {
            beam: BeamGeometry::reference_strip(),
            clamped_overhang: 0.0,
            disc_radius: 5e-3,
            disc_thickness: 2e-3,
            disc_center_x: 25e-3,
            laser_point_x: 51e-3,
            weight_point_x: 102e-3,
            disc_polygon_sides: 16,
        }
    }
}

impl AssemblyGeometry {
    pub fn validate(&self) -> Result<()> {
        self.beam.validate()?;
        let l = self.beam.active_length;
        let half = 0.5 * self.beam.width;
        if !(self.clamped_overhang >= 0.0) {
            return Err(Error::invalid("clamped_overhang", "must be non-negative"));
        }
        if !(self.disc_radius > 0.0 && self.disc_thickness > 0.0) {
            return Err(Error::invalid("disc", "radius and thickness must be positive"));
        }
        if self.disc_polygon_sides < 8 || self.disc_polygon_sides % 4 != 0 {
            return Err(Error::invalid(
                "disc_polygon_sides",
                format!("{} is not a multiple of 4 that is at least 8", self.disc_polygon_sides),
            ));
        }
        if self.polygon_circumradius() >= half
            || self.disc_center_x - half < -self.clamped_overhang
            || self.disc_center_x + half > l
        {
            return Err(Error::MeshGeneration(format!(
                "disc footprint (radius {:.3e} m at x = {:.3e} m) exceeds the beam face",
                self.disc_radius, self.disc_center_x
            )));
        }
        for (name, x) in [("laser_point_x", self.laser_point_x), ("weight_point_x", self.weight_point_x)] {
            if !(x >= -self.clamped_overhang && x <= l) {
                return Err(Error::invalid(name, "point lies off the beam"));
            }
        }
        Ok(())
    }

    /// Circumradius of the disc polygon; chosen so the polygon area equals
    /// the circle area `π r²`.
    pub fn polygon_circumradius(&self) -> f64 {
        let n = self.disc_polygon_sides as f64;
        let theta = 2.0 * std::f64::consts::PI / n;
        self.disc_radius * (theta / theta.sin()).sqrt()
    }
}

/// Tetrahedral mesh with region, boundary and point tags.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedMesh {
    vertices: Vec<[f64; 3]>,
    order: u8,
    connectivity: Vec<usize>,
    regions: Vec<Region>,
    surfaces: BTreeMap<SurfaceTag, Vec<Facet>>,
    points: BTreeMap<PointTag, usize>,
}

impl TaggedMesh {
    /// Build and validate a mesh. Facets are given as corner triples; their
    /// owning cells are looked up and their orientation checked.
    pub fn new(
        vertices: Vec<[f64; 3]>,
        order: u8,
        cells: Vec<Vec<usize>>,
        regions: Vec<Region>,
        surfaces: BTreeMap<SurfaceTag, Vec<[usize; 3]>>,
        points: BTreeMap<PointTag, usize>,
    ) -> Result<Self> {
        if order != 1 && order != 2 {
            return Err(Error::InvalidMesh(format!("unsupported order {order}")));
        }
        let npc = nodes_per_tet(order);
        if regions.len() != cells.len() {
            return Err(Error::InvalidMesh(format!(
                "{} region tags for {} cells",
                regions.len(),
                cells.len()
            )));
        }
        let mut connectivity = Vec::with_capacity(cells.len() * npc);
        for (i, c) in cells.iter().enumerate() {
            if c.len() != npc {
                return Err(Error::InvalidMesh(format!("cell {i} has {} nodes, expected {npc}", c.len())));
            }
            if let Some(&v) = c.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("cell {i} references missing vertex {v}")));
            }
            connectivity.extend_from_slice(c);
        }
        let mut mesh = Self {
            vertices,
            order,
            connectivity,
            regions,
            surfaces: BTreeMap::new(),
            points,
        };
        mesh.check_cells()?;
        mesh.surfaces = mesh.resolve_facets(surfaces)?;
        mesh.check_tags()?;
        Ok(mesh)
    }

    fn check_cells(&self) -> Result<()> {
        for i in 0..self.n_cells() {
            let v = signed_volume(&self.cell_corners(i));
            if !(v > 0.0) {
                return Err(Error::InvalidMesh(format!("cell {i} has non-positive volume {v:e}")));
            }
            if self.order == 2 {
                let c = self.cell(i);
                for (k, &(a, b)) in TET_EDGES.iter().enumerate() {
                    let (pa, pb, pm) = (self.vertices[c[a]], self.vertices[c[b]], self.vertices[c[4 + k]]);
                    let len = (0..3).map(|d| (pa[d] - pb[d]).powi(2)).sum::<f64>().sqrt();
                    let off = (0..3)
                        .map(|d| (0.5 * (pa[d] + pb[d]) - pm[d]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    if off > 1e-9 * len {
                        return Err(Error::InvalidMesh(format!("cell {i}: mid-edge node {} is not at the edge midpoint", c[4 + k])));
                    }
                }
            }
        }
        Ok(())
    }

    fn resolve_facets(
        &self,
        surfaces: BTreeMap<SurfaceTag, Vec<[usize; 3]>>,
    ) -> Result<BTreeMap<SurfaceTag, Vec<Facet>>> {
        let mut faces: HashMap<[usize; 3], Vec<(usize, usize)>> = HashMap::new();
        for cell in 0..self.n_cells() {
            let c = self.cell(cell);
            for (k, f) in TET_FACES.iter().enumerate() {
                let mut key = f.map(|i| c[i]);
                key.sort_unstable();
                faces.entry(key).or_default().push((cell, k));
            }
        }
        let mut out = BTreeMap::new();
        for (tag, list) in surfaces {
            let mut resolved = Vec::with_capacity(list.len());
            for corners in list {
                let mut key = corners;
                key.sort_unstable();
                let owner = faces
                    .get(&key)
                    .and_then(|cands| cands.iter().find(|&&(cell, _)| self.regions[cell] == tag.owner()));
                let Some(&(cell, local_face)) = owner else {
                    return Err(Error::InvalidMesh(format!(
                        "{tag} facet {corners:?} is not a face of a {} cell",
                        tag.owner().name()
                    )));
                };
                let opposite = self.vertices[self.cell(cell)[local_face]];
                let p = corners.map(|v| self.vertices[v]);
                let n = cross(sub(p[1], p[0]), sub(p[2], p[0]));
                if dot(n, sub(opposite, p[0])) >= 0.0 {
                    return Err(Error::InvalidMesh(format!("{tag} facet {corners:?} is not oriented outward")));
                }
                resolved.push(Facet {
                    corners,
                    cell,
                    local_face,
                });
            }
            out.insert(tag, resolved);
        }
        Ok(out)
    }

    fn check_tags(&self) -> Result<()> {
        let has_piezo = self.regions.contains(&Region::Piezo);
        let declared_empty = |t: SurfaceTag| self.surfaces.get(&t).is_some_and(|f| f.is_empty());
        if declared_empty(SurfaceTag::GammaPQ) || (has_piezo && self.facets(SurfaceTag::GammaPQ).is_empty()) {
            return Err(Error::InvalidMesh("electrode surface missing".into()));
        }
        if has_piezo && self.facets(SurfaceTag::GammaP0).is_empty() {
            return Err(Error::InvalidMesh("grounded electrode surface missing".into()));
        }
        let elastic_vertices: std::collections::HashSet<usize> = (0..self.n_cells())
            .filter(|&c| self.regions[c] == Region::Elastic)
            .flat_map(|c| self.cell(c)[..4].to_vec())
            .collect();
        for (tag, &v) in &self.points {
            if !elastic_vertices.contains(&v) {
                return Err(Error::InvalidMesh(format!(
                    "point {} (vertex {v}) is not a corner of an ELASTIC cell",
                    tag.name()
                )));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn nodes_per_cell(&self) -> usize {
        nodes_per_tet(self.order)
    }

    pub fn n_cells(&self) -> usize {
        self.regions.len()
    }

    pub fn cell(&self, i: usize) -> &[usize] {
        let n = self.nodes_per_cell();
        &self.connectivity[i * n..(i + 1) * n]
    }

    pub fn cell_corners(&self, i: usize) -> [[f64; 3]; 4] {
        let c = self.cell(i);
        [0, 1, 2, 3].map(|k| self.vertices[c[k]])
    }

    pub fn region(&self, i: usize) -> Region {
        self.regions[i]
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn has_region(&self, r: Region) -> bool {
        self.regions.contains(&r)
    }

    pub fn facets(&self, tag: SurfaceTag) -> &[Facet] {
        self.surfaces.get(&tag).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn surface_tags(&self) -> impl Iterator<Item = SurfaceTag> + '_ {
        self.surfaces.keys().copied()
    }

    pub fn point(&self, tag: PointTag) -> Option<usize> {
        self.points.get(&tag).copied()
    }

    pub fn points(&self) -> &BTreeMap<PointTag, usize> {
        &self.points
    }

    /// Number of distinct corner vertices (excludes mid-edge nodes).
    pub fn n_corner_vertices(&self) -> usize {
        let mut seen = vec![false; self.vertices.len()];
        for i in 0..self.n_cells() {
            for &v in &self.cell(i)[..4] {
                seen[v] = true;
            }
        }
        seen.into_iter().filter(|&s| s).count()
    }

    /// Total volume of the cells in `region`.
    pub fn region_volume(&self, region: Region) -> f64 {
        (0..self.n_cells())
            .filter(|&c| self.regions[c] == region)
            .map(|c| signed_volume(&self.cell_corners(c)))
            .sum()
    }

    /// Total area of a tagged surface.
    pub fn surface_area(&self, tag: SurfaceTag) -> f64 {
        self.facets(tag)
            .iter()
            .map(|f| {
                let p = f.corners.map(|v| self.vertices[v]);
                0.5 * norm(cross(sub(p[1], p[0]), sub(p[2], p[0])))
            })
            .sum()
    }

    /// All nodes (corners and mid-edge nodes) lying on facets of `tag`.
    pub fn surface_nodes(&self, tag: SurfaceTag) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .facets(tag)
            .iter()
            .flat_map(|f| self.facet_nodes(f))
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Local node positions (within the owning cell) of a facet.
    pub fn facet_local_nodes(&self, f: &Facet) -> Vec<usize> {
        let corners = TET_FACES[f.local_face];
        let mut local = corners.to_vec();
        if self.order == 2 {
            for (k, &(a, b)) in TET_EDGES.iter().enumerate() {
                if corners.contains(&a) && corners.contains(&b) {
                    local.push(4 + k);
                }
            }
        }
        local
    }

    pub fn facet_nodes(&self, f: &Facet) -> Vec<usize> {
        let c = self.cell(f.cell);
        self.facet_local_nodes(f).into_iter().map(|l| c[l]).collect()
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for d in 0..3 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        (lo, hi)
    }

    pub(crate) fn raw_surfaces(&self) -> BTreeMap<SurfaceTag, Vec<[usize; 3]>> {
        self.surfaces
            .iter()
            .map(|(t, f)| (*t, f.iter().map(|f| f.corners).collect()))
            .collect()
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
