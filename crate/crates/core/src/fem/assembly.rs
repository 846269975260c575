//! Global operators of the coupled piezo-elastic problem.
//!
//! Operator naming used throughout the solvers:
//!
//! | field            | size        | integrand                                   |
//! |------------------|-------------|---------------------------------------------|
//! | `mass`           | nu × nu     | ρ N·N                                       |
//! | `stiffness_beam` | nu × nu     | εᵀ C ε over ELASTIC at the reference modulus|
//! | `stiffness_piezo`| nu × nu     | εᵀ Cᴾ ε over PIEZO                          |
//! | `coupling`       | np × nu     | ∇ψᵀ e ε(N)                                  |
//! | `dielectric`     | np × np     | ∇ψᵀ ϵ ∇ψ                                    |
//! | `flux_u`         | np × nu     | ψ n·e ε(N) on the free electrode            |
//! | `flux_p`         | np × np     | ψ n·ϵ∇ψ on the free electrode               |
//! | `penalty`        | np × np     | γ ψ ψ on the free electrode                 |

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector3};
use rayon::prelude::*;

use super::quadrature::{tet_degree5, triangle_degree4};
use super::shape::{self, TetGeometry, TET_FACES};
use super::space::FieldSpace;
use crate::error::{Error, Result};
use crate::mesh::{cross, norm, sub, Facet, PointTag, Region, SurfaceTag, TaggedMesh};
use crate::model::{isotropic_stiffness_voigt, ElasticMaterial, Matrix3x6, PiezoMaterial, RayleighDamping, GRAVITY};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// Constitutive data of the two regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Materials {
    pub beam: ElasticMaterial,
    pub piezo: PiezoMaterial,
}

impl Default for Materials {
    fn default() -> Self {
        Self {
            beam: ElasticMaterial::beam_steel(),
            piezo: PiezoMaterial::pic181(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    /// Electrode penalty factor; the weight on a facet is `factor · ε₃₃ / h`
    /// with `h` the longest facet edge.
    pub nitsche_factor: f64,
    /// Downward gravitational acceleration, m/s². Zero disables body load.
    pub gravity: f64,
    /// Downward point force at the weight point `W`, N.
    pub tip_force: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            nitsche_factor: 1e5,
            gravity: GRAVITY,
            tip_force: 0.282 * GRAVITY,
        }
    }
}

impl AssemblyOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.nitsche_factor >= 0.0) || !self.nitsche_factor.is_finite() {
            return Err(Error::invalid("nitsche_factor", "must be finite and non-negative"));
        }
        if !self.gravity.is_finite() || !self.tip_force.is_finite() {
            return Err(Error::invalid("load", "must be finite"));
        }
        Ok(())
    }
}

/// Operators on the full (unconstrained) DOF numbering.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub u_space: FieldSpace,
    pub p_space: FieldSpace,
    pub materials: Materials,
    pub options: AssemblyOptions,
    pub mass: CsrMatrix,
    pub stiffness_beam: CsrMatrix,
    pub stiffness_piezo: CsrMatrix,
    pub coupling: CsrMatrix,
    pub dielectric: CsrMatrix,
    pub flux_u: CsrMatrix,
    pub flux_p: CsrMatrix,
    pub penalty: CsrMatrix,
    pub body_load: Vec<f64>,
    pub tip_load: Vec<f64>,
    /// 1 on potential DOFs of free-electrode nodes, 0 elsewhere.
    pub electrode: Vec<f64>,
    /// Charge on the grounded electrode is `q_u·u − q_p·p`.
    pub ground_charge_u: Vec<f64>,
    pub ground_charge_p: Vec<f64>,
    /// Full index of the z displacement at the laser point.
    pub laser_dof: Option<usize>,
}

impl AssembledSystem {
    pub fn reference_modulus(&self) -> f64 {
        self.materials.beam.young_modulus
    }

    /// `(E / E_ref) K_beam + K_piezo`.
    pub fn stiffness(&self, young_modulus: f64) -> CsrMatrix {
        self.stiffness_beam
            .linear_combination(young_modulus / self.reference_modulus(), &self.stiffness_piezo, 1.0)
    }

    /// Rayleigh damping `αM + βK` at the reference modulus.
    pub fn damping_matrix(&self, damping: &RayleighDamping) -> CsrMatrix {
        self.mass
            .linear_combination(damping.alpha, &self.stiffness(self.reference_modulus()), damping.beta)
    }

    /// Total mass `ρ·V` summed over both regions.
    pub fn total_mass(&self) -> f64 {
        self.mass.values().iter().sum::<f64>() / 3.0
    }

    /// Restrict all operators to the free DOFs.
    pub fn reduce(&self) -> ReducedSystem {
        let uf = self.u_space.free_dofs();
        let pf = self.p_space.free_dofs();
        let coupling = self.coupling.select(pf, uf);
        let flux_u = self.flux_u.select(pf, uf);
        let flux_p = self.flux_p.select(pf, pf);
        let penalty = self.penalty.select(pf, pf);
        let dielectric = self.dielectric.select(pf, pf);
        let flux_p_t = flux_p.transpose();
        let lhs_coupling = coupling.linear_combination(1.0, &flux_u, -1.0);
        let potential = dielectric
            .linear_combination(1.0, &flux_p, -1.0)
            .linear_combination(1.0, &flux_p_t, 1.0)
            .linear_combination(1.0, &penalty, 1.0);
        let ones = self.p_space.restrict(&self.electrode);
        let electrode_flux_u = flux_u.tr_mul_vec(&ones);
        let electrode_flux_p = flux_p.tr_mul_vec(&ones);
        let nitsche_rhs = flux_p_t.linear_combination(1.0, &penalty, 1.0).mul_vec(&ones);
        ReducedSystem {
            reference_modulus: self.reference_modulus(),
            mass: self.mass.select(uf, uf),
            stiffness_beam: self.stiffness_beam.select(uf, uf),
            stiffness_piezo: self.stiffness_piezo.select(uf, uf),
            coupling: lhs_coupling,
            potential,
            flux_u,
            flux_p,
            body_load: self.u_space.restrict(&self.body_load),
            tip_load: self.u_space.restrict(&self.tip_load),
            electrode: ones,
            electrode_flux_u,
            electrode_flux_p,
            nitsche_rhs,
            dielectric,
            ground_charge_u: self.u_space.restrict(&self.ground_charge_u),
            ground_charge_p: self.p_space.restrict(&self.ground_charge_p),
            laser_dof: self.laser_dof.and_then(|d| self.u_space.free_index(d)),
        }
    }
}

/// Operators on the free DOFs, in the combinations the solvers need.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub reference_modulus: f64,
    pub mass: CsrMatrix,
    pub stiffness_beam: CsrMatrix,
    pub stiffness_piezo: CsrMatrix,
    /// `L = coupling − flux_u`, np × nu.
    pub coupling: CsrMatrix,
    /// `A = D − F + Fᵀ + penalty`, np × np.
    pub potential: CsrMatrix,
    pub flux_u: CsrMatrix,
    pub flux_p: CsrMatrix,
    pub body_load: Vec<f64>,
    pub tip_load: Vec<f64>,
    pub electrode: Vec<f64>,
    /// `flux_uᵀ 1`: charge sensitivity to displacement.
    pub electrode_flux_u: Vec<f64>,
    /// `flux_pᵀ 1`.
    pub electrode_flux_p: Vec<f64>,
    /// `(Fᵀ + penalty) 1`: load of the electrode potential on the potential rows.
    pub nitsche_rhs: Vec<f64>,
    pub dielectric: CsrMatrix,
    pub ground_charge_u: Vec<f64>,
    pub ground_charge_p: Vec<f64>,
    pub laser_dof: Option<usize>,
}

impl ReducedSystem {
    pub fn n_u(&self) -> usize {
        self.mass.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.potential.nrows()
    }

    pub fn stiffness(&self, young_modulus: f64) -> CsrMatrix {
        self.stiffness_beam
            .linear_combination(young_modulus / self.reference_modulus, &self.stiffness_piezo, 1.0)
    }

    /// Charge leaving through the free electrode, `1ᵀ(flux_u u − flux_p p)`.
    pub fn electrode_charge(&self, u: &[f64], p: &[f64]) -> f64 {
        crate::sparse::dot(&self.electrode_flux_u, u) - crate::sparse::dot(&self.electrode_flux_p, p)
    }

    /// Charge on the grounded electrode.
    pub fn ground_charge(&self, u: &[f64], p: &[f64]) -> f64 {
        crate::sparse::dot(&self.ground_charge_u, u) - crate::sparse::dot(&self.ground_charge_p, p)
    }
}

#[derive(Default)]
struct Partial {
    mass: Vec<(usize, usize, f64)>,
    beam: Vec<(usize, usize, f64)>,
    piezo: Vec<(usize, usize, f64)>,
    coupling: Vec<(usize, usize, f64)>,
    dielectric: Vec<(usize, usize, f64)>,
    body: Vec<(usize, f64)>,
}

struct CellKernel<'a> {
    mesh: &'a TaggedMesh,
    u: &'a FieldSpace,
    p: &'a FieldSpace,
    elastic: Matrix6<f64>,
    materials: &'a Materials,
    gravity: f64,
}

impl CellKernel<'_> {
    fn cell(&self, c: usize, out: &mut Partial) -> Result<()> {
        let mesh = self.mesh;
        let order = mesh.order();
        let n = mesh.nodes_per_cell();
        let nodes = mesh.cell(c);
        let geom = TetGeometry::new(&mesh.cell_corners(c))
            .map_err(|e| Error::InvalidMesh(format!("cell {c}: {e}")))?;
        let region = mesh.region(c);
        let (c_mat, rho) = match region {
            Region::Elastic => (self.elastic, self.materials.beam.density),
            Region::Piezo => (self.materials.piezo.stiffness_voigt, self.materials.piezo.density),
        };
        let piezo = region == Region::Piezo;
        let e_mat = self.materials.piezo.coupling_voigt;
        let eps = self.materials.piezo.permittivity;

        let mut ke = DMatrix::<f64>::zeros(3 * n, 3 * n);
        let mut me = DMatrix::<f64>::zeros(n, n);
        let mut be = DMatrix::<f64>::zeros(n, 3 * n);
        let mut de = DMatrix::<f64>::zeros(n, n);
        let mut fe = vec![0.0; n];
        let mut bmat = DMatrix::<f64>::zeros(6, 3 * n);
        let mut grad = DMatrix::<f64>::zeros(3, n);
        for q in tet_degree5() {
            let w = q.weight * geom.det_j.abs();
            let vals = shape::values(order, &q.bary);
            let grads = geom.gradients(order, &q.bary);
            for a in 0..n {
                bmat.view_mut((0, 3 * a), (6, 3)).copy_from(&shape::strain_block(&grads[a]));
                grad.set_column(a, &grads[a]);
            }
            let cb = c_mat * &bmat;
            ke.gemm_tr(w, &bmat, &cb, 1.0);
            for a in 0..n {
                fe[a] += w * rho * vals[a];
                for b in 0..n {
                    me[(a, b)] += w * rho * vals[a] * vals[b];
                }
            }
            if piezo {
                let eb = e_mat * &bmat;
                be.gemm_tr(w, &grad, &eb, 1.0);
                let eg = eps * &grad;
                de.gemm_tr(w, &grad, &eg, 1.0);
            }
        }

        let udofs: Vec<usize> = (0..3 * n)
            .map(|k| self.u.dof(nodes[k / 3], k % 3).expect("every cell node carries displacement"))
            .collect();
        let target = if piezo { &mut out.piezo } else { &mut out.beam };
        for i in 0..3 * n {
            for j in 0..3 * n {
                target.push((udofs[i], udofs[j], ke[(i, j)]));
            }
        }
        for a in 0..n {
            for b in 0..n {
                for k in 0..3 {
                    out.mass.push((udofs[3 * a + k], udofs[3 * b + k], me[(a, b)]));
                }
            }
            if self.gravity != 0.0 {
                out.body.push((udofs[3 * a + 2], -self.gravity * fe[a]));
            }
        }
        if piezo {
            let pdofs: Vec<usize> = nodes
                .iter()
                .map(|&v| self.p.dof(v, 0).expect("piezo nodes carry potential"))
                .collect();
            for j in 0..n {
                for k in 0..3 * n {
                    out.coupling.push((pdofs[j], udofs[k], be[(j, k)]));
                }
                for k in 0..n {
                    out.dielectric.push((pdofs[j], pdofs[k], de[(j, k)]));
                }
            }
        }
        Ok(())
    }
}

/// Quadrature data of a boundary facet mapped into its owning cell.
pub(crate) struct FacetFrame {
    pub normal: Vector3<f64>,
    pub diameter: f64,
    pub geom: TetGeometry,
    /// Barycentric points in the owning cell and integration weights.
    pub points: Vec<([f64; 4], f64)>,
}

impl FacetFrame {
    pub(crate) fn new(mesh: &TaggedMesh, f: &Facet) -> Result<Self> {
        let p = f.corners.map(|v| mesh.vertices()[v]);
        let nrm = cross(sub(p[1], p[0]), sub(p[2], p[0]));
        let twice_area = norm(nrm);
        let normal = Vector3::from(nrm) / twice_area;
        let diameter = [(0, 1), (1, 2), (2, 0)]
            .iter()
            .map(|&(a, b)| norm(sub(p[a], p[b])))
            .fold(0.0, f64::max);
        let geom = TetGeometry::new(&mesh.cell_corners(f.cell))?;
        let face = TET_FACES[f.local_face];
        let points = triangle_degree4()
            .into_iter()
            .map(|q| {
                let mut l = [0.0; 4];
                for k in 0..3 {
                    l[face[k]] = q.bary[k];
                }
                (l, q.weight * twice_area)
            })
            .collect();
        Ok(Self {
            normal,
            diameter,
            geom,
            points,
        })
    }
}

/// Electric flux rows of one facet: `(∫ψ_j n·e ε(N), ∫ψ_j n·ϵ∇ψ)` per local node `j`.
fn facet_flux(
    mesh: &TaggedMesh,
    frame: &FacetFrame,
    e_mat: &Matrix3x6,
    eps: &Matrix3<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let order = mesh.order();
    let n = mesh.nodes_per_cell();
    let mut gu = DMatrix::<f64>::zeros(n, 3 * n);
    let mut fp = DMatrix::<f64>::zeros(n, n);
    let mut mm = DMatrix::<f64>::zeros(n, n);
    let ne = frame.normal.transpose() * e_mat;
    let neps = frame.normal.transpose() * eps;
    for &(l, w) in &frame.points {
        let vals = shape::values(order, &l);
        let grads = frame.geom.gradients(order, &l);
        for k in 0..n {
            let sb = ne * shape::strain_block(&grads[k]);
            let fk = (neps * grads[k])[(0, 0)];
            for j in 0..n {
                let wj = w * vals[j];
                for c in 0..3 {
                    gu[(j, 3 * k + c)] += wj * sb[(0, c)];
                }
                fp[(j, k)] += wj * fk;
                mm[(j, k)] += wj * vals[k];
            }
        }
    }
    (gu, fp, mm)
}

/// Assemble every operator of the coupled problem.
pub fn assemble(mesh: &TaggedMesh, materials: &Materials, options: &AssemblyOptions) -> Result<AssembledSystem> {
    materials.beam.validate()?;
    materials.piezo.validate()?;
    options.validate()?;
    let u_space = FieldSpace::displacement(mesh);
    let p_space = FieldSpace::potential(mesh);
    if u_space.n_constrained() == 0 {
        return Err(Error::InvalidMesh("no clamped boundary".into()));
    }
    let nu = u_space.n_dofs();
    let np = p_space.n_dofs();
    let kernel = CellKernel {
        mesh,
        u: &u_space,
        p: &p_space,
        elastic: isotropic_stiffness_voigt(&materials.beam)?,
        materials,
        gravity: options.gravity,
    };

    let cells: Vec<usize> = (0..mesh.n_cells()).collect();
    let partials: Vec<Partial> = cells
        .par_chunks(256)
        .map(|chunk| {
            let mut part = Partial::default();
            for &c in chunk {
                kernel.cell(c, &mut part)?;
            }
            Ok(part)
        })
        .collect::<Result<_>>()?;

    let mut mass = TripletBuilder::new(nu, nu);
    let mut beam = TripletBuilder::new(nu, nu);
    let mut piezo = TripletBuilder::new(nu, nu);
    let mut coupling = TripletBuilder::new(np, nu);
    let mut dielectric = TripletBuilder::new(np, np);
    let mut body_load = vec![0.0; nu];
    for part in partials {
        for (dst, src) in [
            (&mut mass, part.mass),
            (&mut beam, part.beam),
            (&mut piezo, part.piezo),
            (&mut coupling, part.coupling),
            (&mut dielectric, part.dielectric),
        ] {
            for (i, j, v) in src {
                dst.push(i, j, v);
            }
        }
        for (i, v) in part.body {
            body_load[i] += v;
        }
    }

    let e_mat = materials.piezo.coupling_voigt;
    let eps = materials.piezo.permittivity;
    let mut flux_u = TripletBuilder::new(np, nu);
    let mut flux_p = TripletBuilder::new(np, np);
    let mut penalty = TripletBuilder::new(np, np);
    let mut electrode = vec![0.0; np];
    for f in mesh.facets(SurfaceTag::GammaPQ) {
        let frame = FacetFrame::new(mesh, f)?;
        let (gu, fp, mm) = facet_flux(mesh, &frame, &e_mat, &eps);
        let gamma = options.nitsche_factor * materials.piezo.eps33() / frame.diameter;
        let nodes = mesh.cell(f.cell);
        let pd = |a: usize| p_space.dof(nodes[a], 0).expect("electrode nodes carry potential");
        let ud = |k: usize| u_space.dof(nodes[k / 3], k % 3).expect("displacement dof");
        let local = mesh.facet_local_nodes(f);
        for &j in &local {
            electrode[pd(j)] = 1.0;
            for k in 0..mesh.nodes_per_cell() {
                for c in 0..3 {
                    flux_u.push(pd(j), ud(3 * k + c), gu[(j, 3 * k + c)]);
                }
                flux_p.push(pd(j), pd(k), fp[(j, k)]);
            }
            for &k in &local {
                penalty.push(pd(j), pd(k), gamma * mm[(j, k)]);
            }
        }
    }

    let mut ground_charge_u = vec![0.0; nu];
    let mut ground_charge_p = vec![0.0; np];
    for f in mesh.facets(SurfaceTag::GammaP0) {
        let frame = FacetFrame::new(mesh, f)?;
        let (gu, fp, _) = facet_flux(mesh, &frame, &e_mat, &eps);
        let nodes = mesh.cell(f.cell);
        for &j in &mesh.facet_local_nodes(f) {
            for k in 0..mesh.nodes_per_cell() {
                for c in 0..3 {
                    let d = u_space.dof(nodes[k], c).expect("displacement dof");
                    ground_charge_u[d] += gu[(j, 3 * k + c)];
                }
                let d = p_space.dof(nodes[k], 0).expect("potential dof");
                ground_charge_p[d] += fp[(j, k)];
            }
        }
    }

    let mut tip_load = vec![0.0; nu];
    if options.tip_force != 0.0 {
        let w = mesh
            .point(PointTag::W)
            .ok_or_else(|| Error::InvalidMesh("weight point W missing".into()))?;
        tip_load[u_space.dof(w, 2).expect("W carries displacement")] = -options.tip_force;
    }
    let laser_dof = mesh.point(PointTag::L).and_then(|l| u_space.dof(l, 2));

    Ok(AssembledSystem {
        materials: *materials,
        options: *options,
        mass: mass.build(),
        stiffness_beam: beam.build(),
        stiffness_piezo: piezo.build(),
        coupling: coupling.build(),
        dielectric: dielectric.build(),
        flux_u: flux_u.build(),
        flux_p: flux_p.build(),
        penalty: penalty.build(),
        body_load,
        tip_load,
        electrode,
        ground_charge_u,
        ground_charge_p,
        laser_dof,
        u_space,
        p_space,
    })
}
