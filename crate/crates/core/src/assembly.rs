//! Assembly of the Stokes saddle-point system
//!
//! ```text
//! [ A  B^T ] [u]   [f]
//! [ B  -M  ] [p] = [0]
//! ```
//!
//! with `A` the component-wise stiffness plus the div–div stabilization,
//! `B_{kj} = -int q_k div v_j`, and `M` the pressure stabilization
//! (`tau_T` gradient term plus `tau_S h_S` jump term on interior edges).

use crate::elements::{physical_gradient, DofMap, Family, SchemeSpec, ScalarSpace};
use crate::error::{input_error, AfemError, Result};
use crate::mesh::{Mesh, Point, Vector};
use crate::quadrature::QuadratureRule;
use crate::sparse::{SparseMatrix, TripletBuilder};

/// A point force `force * delta_z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSource {
    pub z: Point,
    pub force: Vector,
}

impl PointSource {
    pub fn new(x: f64, y: f64, fx: f64, fy: f64) -> Self {
        Self { z: Point::new(x, y), force: Vector::new(fx, fy) }
    }
}

/// Assembled blocks before boundary conditions.
#[derive(Clone, Debug)]
pub struct SaddleSystem {
    /// Velocity–velocity block.
    pub a: SparseMatrix,
    /// Pressure–velocity block.
    pub b: SparseMatrix,
    /// Pressure–pressure stabilization block.
    pub m: SparseMatrix,
    /// Velocity load vector.
    pub load: Vec<f64>,
    /// Integral of every pressure basis function.
    pub mean: Vec<f64>,
}

/// Precomputed reference values at the assembly quadrature points.
struct ReferenceTable {
    weights: Vec<f64>,
    vel_dbary: Vec<Vec<[f64; 3]>>,
    pres_values: Vec<Vec<f64>>,
    pres_dbary: Vec<Vec<[f64; 3]>>,
}

impl ReferenceTable {
    fn new(family: Family) -> Self {
        // degree 4 integrates every product in the bilinear forms exactly
        let rule = QuadratureRule::triangle(4);
        let (vs, ps) = (family.velocity_space(), family.pressure_space());
        Self {
            weights: rule.weights.clone(),
            vel_dbary: rule.points.iter().map(|l| vs.barycentric_derivatives(l)).collect(),
            pres_values: rule.points.iter().map(|l| ps.values(l)).collect(),
            pres_dbary: rule.points.iter().map(|l| ps.barycentric_derivatives(l)).collect(),
        }
    }
}

pub fn assemble(mesh: &Mesh, scheme: &SchemeSpec, dofs: &DofMap) -> SaddleSystem {
    assert_eq!(dofs.family(), scheme.family, "dof map built for another scheme");
    let stab = scheme.stab_or_zero();
    let table = ReferenceTable::new(scheme.family);
    let (nsv, np) = (dofs.num_scalar_velocity(), dofs.num_pressure());
    let mut a = TripletBuilder::new(2 * nsv, 2 * nsv);
    let mut b = TripletBuilder::new(np, 2 * nsv);
    let mut m = TripletBuilder::new(np, np);
    let mut mean = vec![0.0; np];
    let nloc = scheme.family.velocity_space().local_dim();
    let ploc = scheme.family.pressure_space().local_dim();
    let pressure_gradients = scheme.family.pressure_space() != ScalarSpace::P0 && stab.tau_t > 0.0;

    let mut stiff = vec![0.0; nloc * nloc];
    let mut divdiv = vec![[[0.0; 2]; 2]; nloc * nloc];
    let mut coupling = vec![[0.0; 2]; ploc * nloc];
    let mut pgrad = vec![0.0; ploc * ploc];
    for t in 0..mesh.num_elements() {
        let area = mesh.area(t);
        let grad_l = mesh.barycentric_gradients(t);
        stiff.fill(0.0);
        divdiv.fill([[0.0; 2]; 2]);
        coupling.fill([0.0; 2]);
        pgrad.fill(0.0);
        let mut pmass = vec![0.0; ploc];
        for (q, w) in table.weights.iter().enumerate() {
            let w = w * area;
            let g: Vec<Vector> = table.vel_dbary[q].iter().map(|d| physical_gradient(d, &grad_l)).collect();
            for i in 0..nloc {
                for j in 0..nloc {
                    stiff[i * nloc + j] += w * g[i].dot(&g[j]);
                    if stab.tau_div > 0.0 {
                        for c in 0..2 {
                            for d in 0..2 {
                                divdiv[i * nloc + j][c][d] += w * (g[i][c] * g[j][d]);
                            }
                        }
                    }
                }
            }
            for k in 0..ploc {
                let psi = table.pres_values[q][k];
                pmass[k] += w * psi;
                for i in 0..nloc {
                    coupling[k * nloc + i][0] -= w * psi * g[i].x;
                    coupling[k * nloc + i][1] -= w * psi * g[i].y;
                }
            }
            if pressure_gradients {
                let pg: Vec<Vector> = table.pres_dbary[q].iter().map(|d| physical_gradient(d, &grad_l)).collect();
                for k in 0..ploc {
                    for l in 0..ploc {
                        pgrad[k * ploc + l] += w * pg[k].dot(&pg[l]);
                    }
                }
            }
        }

        let vd = dofs.velocity_dofs(t);
        let pd = dofs.pressure_dofs(t);
        for i in 0..nloc {
            for j in 0..nloc {
                for c in 0..2 {
                    for d in 0..2 {
                        let mut v = stab.tau_div * divdiv[i * nloc + j][c][d];
                        if c == d {
                            v += stiff[i * nloc + j];
                        }
                        if v != 0.0 || c == d {
                            a.push(c * nsv + vd[i], d * nsv + vd[j], v);
                        }
                    }
                }
            }
        }
        for k in 0..ploc {
            mean[pd[k]] += pmass[k];
            for i in 0..nloc {
                for c in 0..2 {
                    b.push(pd[k], c * nsv + vd[i], coupling[k * nloc + i][c]);
                }
            }
            if pressure_gradients {
                for l in 0..ploc {
                    m.push(pd[k], pd[l], stab.tau_t * pgrad[k * ploc + l]);
                }
            }
        }
    }

    // Jump penalty; continuous pressures have no jumps.
    if scheme.family.pressure_space() == ScalarSpace::P0 && stab.tau_s > 0.0 {
        for e in 0..mesh.num_edges() {
            if let (t0, Some(t1)) = mesh.edge_elements(e) {
                let len = mesh.edge_length(e);
                // tau_S h_S int_S [p][q] with h_S = |S|
                let v = stab.tau_s * len * len;
                let (p0, p1) = (dofs.pressure_dofs(t0)[0], dofs.pressure_dofs(t1)[0]);
                m.push(p0, p0, v);
                m.push(p0, p1, -v);
                m.push(p1, p0, -v);
                m.push(p1, p1, v);
            }
        }
    }

    SaddleSystem { a: a.build(), b: b.build(), m: m.build(), load: vec![0.0; 2 * nsv], mean }
}

/// Load vector of a sum of point forces: entry `(c, s)` is
/// `sum_z F_{z,c} phi_s(z)`, with `phi_s` evaluated on the lowest-id element
/// containing `z`.
pub fn delta_load(mesh: &Mesh, scheme: &SchemeSpec, dofs: &DofMap, sources: &[PointSource]) -> Result<Vec<f64>> {
    let nsv = dofs.num_scalar_velocity();
    let mut load = vec![0.0; 2 * nsv];
    let space = scheme.family.velocity_space();
    for src in sources {
        let t = mesh.locate(&src.z).map_err(|_| {
            AfemError::Input(format!("source ({}, {}) lies outside the domain", src.z.x, src.z.y))
        })?;
        let values = space.values(&mesh.barycentric(t, &src.z));
        for (&s, phi) in dofs.velocity_dofs(t).iter().zip(values) {
            load[s] += src.force.x * phi;
            load[nsv + s] += src.force.y * phi;
        }
    }
    Ok(load)
}

/// System restricted to the free velocity unknowns.
#[derive(Clone, Debug)]
pub struct ConstrainedSystem {
    pub a: SparseMatrix,
    pub b: SparseMatrix,
    pub m: SparseMatrix,
    pub mean: Vec<f64>,
    pub rhs_velocity: Vec<f64>,
    pub rhs_pressure: Vec<f64>,
    /// Global ids of the free velocity unknowns.
    pub free: Vec<usize>,
    /// Global ids of the constrained velocity unknowns.
    pub boundary: Vec<usize>,
    pub boundary_values: Vec<f64>,
    pub num_velocity: usize,
}

impl ConstrainedSystem {
    /// Full-length velocity vector from free values and the boundary data.
    pub fn expand_velocity(&self, free_values: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.num_velocity];
        for (&d, &v) in self.free.iter().zip(free_values) {
            u[d] = v;
        }
        for (&d, &v) in self.boundary.iter().zip(&self.boundary_values) {
            u[d] = v;
        }
        u
    }
}

/// Eliminates the boundary velocity unknowns with prescribed values `g`
/// (ordered as [`DofMap::boundary_velocity_dofs`]).
pub fn apply_dirichlet(system: &SaddleSystem, dofs: &DofMap, g: &[f64]) -> Result<ConstrainedSystem> {
    let boundary = dofs.boundary_velocity_dofs();
    if g.len() != boundary.len() {
        return input_error(format!("expected {} boundary values, got {}", boundary.len(), g.len()));
    }
    let free = dofs.free_velocity_dofs();
    let nv = dofs.num_velocity();
    let mut free_index = vec![usize::MAX; nv];
    for (i, &d) in free.iter().enumerate() {
        free_index[d] = i;
    }
    let mut g_full = vec![0.0; nv];
    for (&d, &v) in boundary.iter().zip(g) {
        g_full[d] = v;
    }

    let ag = system.a.mul_vec(&g_full);
    let bg = system.b.mul_vec(&g_full);
    let rhs_velocity: Vec<f64> = free.iter().map(|&d| system.load[d] - ag[d]).collect();
    let rhs_pressure: Vec<f64> = bg.iter().map(|v| -v).collect();

    let mut a = TripletBuilder::new(free.len(), free.len());
    for (r, c, v) in system.a.iter() {
        let (fr, fc) = (free_index[r], free_index[c]);
        if fr != usize::MAX && fc != usize::MAX {
            a.push(fr, fc, v);
        }
    }
    let mut b = TripletBuilder::new(system.b.nrows(), free.len());
    for (r, c, v) in system.b.iter() {
        if free_index[c] != usize::MAX {
            b.push(r, free_index[c], v);
        }
    }
    Ok(ConstrainedSystem {
        a: a.build(),
        b: b.build(),
        m: system.m.clone(),
        mean: system.mean.clone(),
        rhs_velocity,
        rhs_pressure,
        free,
        boundary,
        boundary_values: g.to_vec(),
        num_velocity: nv,
    })
}
