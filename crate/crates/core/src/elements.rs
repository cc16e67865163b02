//! Reference bases and degree-of-freedom maps for the four discretizations:
//! Taylor–Hood (P2/P1), mini (P1+bubble/P1) and the stabilized P1/P0 and
//! P1/P1 pairs.

use serde::{Deserialize, Serialize};

use crate::error::{input_error, Result};
use crate::mesh::{Mesh, Point, Vector, CONTAINMENT_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    TaylorHood,
    Mini,
    StabP1P0,
    StabP1P1,
}

impl Family {
    pub fn is_stabilized(self) -> bool {
        matches!(self, Family::StabP1P0 | Family::StabP1P1)
    }

    pub fn velocity_space(self) -> ScalarSpace {
        match self {
            Family::TaylorHood => ScalarSpace::P2,
            Family::Mini => ScalarSpace::P1Bubble,
            Family::StabP1P0 | Family::StabP1P1 => ScalarSpace::P1,
        }
    }

    pub fn pressure_space(self) -> ScalarSpace {
        match self {
            Family::StabP1P0 => ScalarSpace::P0,
            _ => ScalarSpace::P1,
        }
    }

    /// Convergence rate, in terms of Ndof, that adaptivity should attain for
    /// a point force.
    pub fn optimal_rate(self) -> f64 {
        match self {
            Family::TaylorHood => 1.0,
            _ => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::TaylorHood => "taylor-hood",
            Family::Mini => "mini",
            Family::StabP1P0 => "stab-p1p0",
            Family::StabP1P1 => "stab-p1p1",
        }
    }
}

/// Stabilization parameters of the low-order pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabParams {
    /// Weight of the element-wise div–div term.
    pub tau_div: f64,
    /// Weight of the element-wise pressure-gradient term.
    pub tau_t: f64,
    /// Weight of the pressure-jump term on interior edges.
    pub tau_s: f64,
}

impl Default for StabParams {
    fn default() -> Self {
        Self { tau_div: 0.0, tau_t: 0.0, tau_s: 1.0 / 12.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeSpec {
    pub family: Family,
    pub stab: Option<StabParams>,
}

impl SchemeSpec {
    pub fn taylor_hood() -> Self {
        Self { family: Family::TaylorHood, stab: None }
    }

    pub fn mini() -> Self {
        Self { family: Family::Mini, stab: None }
    }

    /// Stabilized P1 velocity with piecewise-constant (`ell = 0`) or continuous
    /// piecewise-linear (`ell = 1`) pressure.
    pub fn stabilized(ell: u8, stab: StabParams) -> Result<Self> {
        let family = match ell {
            0 => Family::StabP1P0,
            1 => Family::StabP1P1,
            _ => return input_error(format!("pressure degree must be 0 or 1, got {ell}")),
        };
        if !(stab.tau_div >= 0.0 && stab.tau_t >= 0.0) {
            return input_error("tau_div and tau_t must be nonnegative");
        }
        if !(stab.tau_s > 0.0) {
            return input_error("tau_s must be positive");
        }
        if family == Family::StabP1P1 && stab.tau_t <= 0.0 {
            // continuous pressures have no jumps, so only the gradient term stabilizes
            return input_error("continuous P1 pressure needs tau_t > 0");
        }
        Ok(Self { family, stab: Some(stab) })
    }

    /// Stabilization parameters, zero for the inf-sup stable pairs.
    pub fn stab_or_zero(&self) -> StabParams {
        self.stab.unwrap_or(StabParams { tau_div: 0.0, tau_t: 0.0, tau_s: 0.0 })
    }
}

/// Scalar finite element spaces used for velocity components and pressure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarSpace {
    P0,
    P1,
    /// P1 enriched with the cubic bubble `27 l0 l1 l2`.
    P1Bubble,
    P2,
}

impl ScalarSpace {
    pub fn local_dim(self) -> usize {
        match self {
            ScalarSpace::P0 => 1,
            ScalarSpace::P1 => 3,
            ScalarSpace::P1Bubble => 4,
            ScalarSpace::P2 => 6,
        }
    }

    /// Basis values at barycentric point `l`.
    ///
    /// P2 ordering: vertex functions `l_i (2 l_i - 1)`, then `4 l_i l_j` for
    /// the edge opposite vertex 0, 1, 2.
    pub fn values(self, l: &[f64; 3]) -> Vec<f64> {
        match self {
            ScalarSpace::P0 => vec![1.0],
            ScalarSpace::P1 => l.to_vec(),
            ScalarSpace::P1Bubble => vec![l[0], l[1], l[2], 27.0 * l[0] * l[1] * l[2]],
            ScalarSpace::P2 => {
                let mut v: Vec<f64> = l.iter().map(|&li| li * (2.0 * li - 1.0)).collect();
                v.extend((0..3).map(|k| 4.0 * l[(k + 1) % 3] * l[(k + 2) % 3]));
                v
            }
        }
    }

    /// Partial derivatives with respect to the three barycentric coordinates.
    pub fn barycentric_derivatives(self, l: &[f64; 3]) -> Vec<[f64; 3]> {
        match self {
            ScalarSpace::P0 => vec![[0.0; 3]],
            ScalarSpace::P1 => vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            ScalarSpace::P1Bubble => vec![
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [27.0 * l[1] * l[2], 27.0 * l[0] * l[2], 27.0 * l[0] * l[1]],
            ],
            ScalarSpace::P2 => {
                let mut d = Vec::with_capacity(6);
                for i in 0..3 {
                    let mut row = [0.0; 3];
                    row[i] = 4.0 * l[i] - 1.0;
                    d.push(row);
                }
                for k in 0..3 {
                    let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                    let mut row = [0.0; 3];
                    row[i] = 4.0 * l[j];
                    row[j] = 4.0 * l[i];
                    d.push(row);
                }
                d
            }
        }
    }

    /// Second derivatives with respect to the barycentric coordinates.
    pub fn barycentric_hessians(self, l: &[f64; 3]) -> Vec<[[f64; 3]; 3]> {
        let zero = [[0.0; 3]; 3];
        match self {
            ScalarSpace::P0 => vec![zero],
            ScalarSpace::P1 => vec![zero; 3],
            ScalarSpace::P1Bubble => {
                let b = [
                    [0.0, 27.0 * l[2], 27.0 * l[1]],
                    [27.0 * l[2], 0.0, 27.0 * l[0]],
                    [27.0 * l[1], 27.0 * l[0], 0.0],
                ];
                vec![zero, zero, zero, b]
            }
            ScalarSpace::P2 => {
                let mut h = Vec::with_capacity(6);
                for i in 0..3 {
                    let mut m = zero;
                    m[i][i] = 4.0;
                    h.push(m);
                }
                for k in 0..3 {
                    let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                    let mut m = zero;
                    m[i][j] = 4.0;
                    m[j][i] = 4.0;
                    h.push(m);
                }
                h
            }
        }
    }
}

/// Physical gradient from barycentric derivatives.
pub(crate) fn physical_gradient(d: &[f64; 3], grad_l: &[Vector; 3]) -> Vector {
    grad_l[0] * d[0] + grad_l[1] * d[1] + grad_l[2] * d[2]
}

/// Physical Laplacian from barycentric second derivatives.
pub(crate) fn physical_laplacian(h: &[[f64; 3]; 3], grad_l: &[Vector; 3]) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            s += h[a][b] * grad_l[a].dot(&grad_l[b]);
        }
    }
    s
}

/// One space's basis evaluated at a physical point.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceValues {
    pub values: Vec<f64>,
    pub gradients: Vec<Vector>,
    pub laplacians: Vec<f64>,
}

impl SpaceValues {
    pub(crate) fn eval(space: ScalarSpace, l: &[f64; 3], grad_l: &[Vector; 3]) -> Self {
        Self {
            values: space.values(l),
            gradients: space.barycentric_derivatives(l).iter().map(|d| physical_gradient(d, grad_l)).collect(),
            laplacians: space.barycentric_hessians(l).iter().map(|h| physical_laplacian(h, grad_l)).collect(),
        }
    }
}

/// Local velocity (per component) and pressure bases at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalBasis {
    pub velocity: SpaceValues,
    pub pressure: SpaceValues,
}

/// Evaluates the local bases of element `t` at the physical point `x`.
pub fn basis_eval(scheme: &SchemeSpec, mesh: &Mesh, t: usize, x: &Point) -> Result<LocalBasis> {
    let l = mesh.barycentric(t, x);
    if l.iter().any(|&li| li < -CONTAINMENT_TOL) {
        return input_error(format!("point ({}, {}) is outside element {t}", x.x, x.y));
    }
    let grad_l = mesh.barycentric_gradients(t);
    Ok(LocalBasis {
        velocity: SpaceValues::eval(scheme.family.velocity_space(), &l, &grad_l),
        pressure: SpaceValues::eval(scheme.family.pressure_space(), &l, &grad_l),
    })
}

/// Global numbering of velocity and pressure unknowns.
///
/// Velocity unknowns are ordered component-wise: the scalar dof `s` of
/// component `c` is `c * num_scalar_velocity() + s`.
#[derive(Clone, Debug)]
pub struct DofMap {
    family: Family,
    n_scalar: usize,
    n_pressure: usize,
    velocity_local: Vec<usize>,
    pressure_local: Vec<usize>,
    scalar_nodes: Vec<Option<Point>>,
    boundary_scalar: Vec<bool>,
}

impl DofMap {
    pub fn new(scheme: &SchemeSpec, mesh: &Mesh) -> Self {
        let family = scheme.family;
        let (nv, ne, nt) = (mesh.num_vertices(), mesh.num_edges(), mesh.num_elements());
        let mut velocity_local = Vec::with_capacity(nt * family.velocity_space().local_dim());
        let mut scalar_nodes: Vec<Option<Point>> = mesh.vertices().iter().map(|p| Some(*p)).collect();
        let mut boundary_scalar: Vec<bool> = (0..nv).map(|v| mesh.is_boundary_vertex(v)).collect();
        match family.velocity_space() {
            ScalarSpace::P2 => {
                for t in 0..nt {
                    velocity_local.extend_from_slice(&mesh.elements()[t]);
                    velocity_local.extend(mesh.element_edges(t).iter().map(|e| nv + e));
                }
                scalar_nodes.extend((0..ne).map(|e| Some(mesh.midpoint(e))));
                boundary_scalar.extend((0..ne).map(|e| mesh.is_boundary_edge(e)));
            }
            ScalarSpace::P1Bubble => {
                for t in 0..nt {
                    velocity_local.extend_from_slice(&mesh.elements()[t]);
                    velocity_local.push(nv + t);
                }
                scalar_nodes.extend(std::iter::repeat_n(None, nt));
                boundary_scalar.extend(std::iter::repeat_n(false, nt));
            }
            ScalarSpace::P1 => {
                for t in 0..nt {
                    velocity_local.extend_from_slice(&mesh.elements()[t]);
                }
            }
            ScalarSpace::P0 => unreachable!("velocity is never piecewise constant"),
        }
        let (n_pressure, pressure_local) = match family.pressure_space() {
            ScalarSpace::P0 => (nt, (0..nt).collect()),
            _ => (nv, mesh.elements().iter().flatten().copied().collect()),
        };
        Self {
            family,
            n_scalar: scalar_nodes.len(),
            n_pressure,
            velocity_local,
            pressure_local,
            scalar_nodes,
            boundary_scalar,
        }
    }

    /// Total number of unknowns of `family` on `mesh`, without building the map.
    pub fn count(family: Family, mesh: &Mesh) -> usize {
        let (nv, ne, nt) = (mesh.num_vertices(), mesh.num_edges(), mesh.num_elements());
        let scalar = match family.velocity_space() {
            ScalarSpace::P2 => nv + ne,
            ScalarSpace::P1Bubble => nv + nt,
            _ => nv,
        };
        let pressure = if family == Family::StabP1P0 { nt } else { nv };
        2 * scalar + pressure
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn num_scalar_velocity(&self) -> usize {
        self.n_scalar
    }

    pub fn num_velocity(&self) -> usize {
        2 * self.n_scalar
    }

    pub fn num_pressure(&self) -> usize {
        self.n_pressure
    }

    /// Dimension of the velocity space plus that of the pressure space,
    /// before any boundary elimination.
    pub fn ndof(&self) -> usize {
        self.num_velocity() + self.n_pressure
    }

    /// Scalar velocity dofs of element `t`, in local basis order.
    pub fn velocity_dofs(&self, t: usize) -> &[usize] {
        let n = self.family.velocity_space().local_dim();
        &self.velocity_local[t * n..(t + 1) * n]
    }

    pub fn pressure_dofs(&self, t: usize) -> &[usize] {
        let n = self.family.pressure_space().local_dim();
        &self.pressure_local[t * n..(t + 1) * n]
    }

    /// Node of a nodal scalar dof (vertex or edge midpoint); `None` for bubbles.
    pub fn scalar_node(&self, s: usize) -> Option<Point> {
        self.scalar_nodes[s]
    }

    pub fn is_boundary_scalar(&self, s: usize) -> bool {
        self.boundary_scalar[s]
    }

    /// Constrained velocity dofs (both components), ascending.
    pub fn boundary_velocity_dofs(&self) -> Vec<usize> {
        let n = self.n_scalar;
        (0..2 * n).filter(|&d| self.boundary_scalar[d % n]).collect()
    }

    pub fn free_velocity_dofs(&self) -> Vec<usize> {
        let n = self.n_scalar;
        (0..2 * n).filter(|&d| !self.boundary_scalar[d % n]).collect()
    }

    /// Nodal values of `g` at the constrained velocity dofs, in the order of
    /// [`DofMap::boundary_velocity_dofs`].
    pub fn boundary_values(&self, g: impl Fn(&Point) -> Vector) -> Vec<f64> {
        let n = self.n_scalar;
        self.boundary_velocity_dofs()
            .into_iter()
            .map(|d| {
                let node = self.scalar_nodes[d % n].expect("boundary dofs are nodal");
                g(&node)[d / n]
            })
            .collect()
    }

    /// Coefficients of the nodal interpolant of a velocity field. Bubble
    /// coefficients are zero.
    pub fn interpolate_velocity(&self, g: impl Fn(&Point) -> Vector) -> Vec<f64> {
        let n = self.n_scalar;
        let mut out = vec![0.0; 2 * n];
        for s in 0..n {
            if let Some(node) = self.scalar_nodes[s] {
                let v = g(&node);
                out[s] = v.x;
                out[n + s] = v.y;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::DomainSpec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    const SPACES: [ScalarSpace; 4] = [ScalarSpace::P0, ScalarSpace::P1, ScalarSpace::P1Bubble, ScalarSpace::P2];

    fn square(n: usize) -> Mesh {
        Mesh::initial(&DomainSpec::unit_square(n).unwrap())
    }

    #[test]
    fn nodal_values() {
        let vertex = [1.0, 0.0, 0.0];
        assert_eq!(ScalarSpace::P1.values(&vertex), vec![1.0, 0.0, 0.0]);
        let mid = [0.0, 0.5, 0.5];
        let p2 = ScalarSpace::P2.values(&mid);
        assert_eq!(p2[3], 1.0);
        assert_eq!((p2[1], p2[2]), (0.0, 0.0));
        let third = 1.0 / 3.0;
        assert_relative_eq!(ScalarSpace::P1Bubble.values(&[third; 3])[3], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn partition_of_unity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
            let l = [1.0 - a - b, a, b];
            for space in [ScalarSpace::P1, ScalarSpace::P2] {
                assert!((space.values(&l).iter().sum::<f64>() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mesh = square(1);
        let t = 1;
        let scheme = SchemeSpec::taylor_hood();
        let step = 1e-5;
        let x = Point::new(0.2, 0.6);
        for space in SPACES {
            let grad_l = mesh.barycentric_gradients(t);
            let at = |p: &Point| space.values(&mesh.barycentric(t, p));
            let l = mesh.barycentric(t, &x);
            let grads: Vec<Vector> =
                space.barycentric_derivatives(&l).iter().map(|d| physical_gradient(d, &grad_l)).collect();
            for (i, g) in grads.iter().enumerate() {
                let dx = (at(&Point::new(x.x + step, x.y))[i] - at(&Point::new(x.x - step, x.y))[i]) / (2.0 * step);
                let dy = (at(&Point::new(x.x, x.y + step))[i] - at(&Point::new(x.x, x.y - step))[i]) / (2.0 * step);
                assert!((g.x - dx).abs() < 1e-6 && (g.y - dy).abs() < 1e-6, "{space:?} basis {i}");
            }
            let lap: Vec<f64> =
                space.barycentric_hessians(&l).iter().map(|h| physical_laplacian(h, &grad_l)).collect();
            for (i, &lp) in lap.iter().enumerate() {
                let s = 1e-3;
                let c = at(&x)[i];
                let fd = (at(&Point::new(x.x + s, x.y))[i] + at(&Point::new(x.x - s, x.y))[i]
                    + at(&Point::new(x.x, x.y + s))[i]
                    + at(&Point::new(x.x, x.y - s))[i]
                    - 4.0 * c)
                    / (s * s);
                assert!((lp - fd).abs() < 1e-4 * (1.0 + lp.abs()), "{space:?} laplacian {i}: {lp} vs {fd}");
            }
        }
        assert!(basis_eval(&scheme, &mesh, 0, &Point::new(0.1, 0.9)).is_err());
    }

    #[test]
    fn dof_counts_on_two_triangles() {
        let mesh = square(1);
        let th = DofMap::new(&SchemeSpec::taylor_hood(), &mesh);
        assert_eq!(th.num_velocity(), 18);
        assert_eq!(th.free_velocity_dofs().len(), 2);
        assert_eq!(th.num_pressure(), 4);
        let p1p0 = DofMap::new(&SchemeSpec::stabilized(0, StabParams::default()).unwrap(), &mesh);
        assert_eq!(p1p0.num_velocity(), 8);
        assert_eq!(p1p0.free_velocity_dofs().len(), 0);
        assert_eq!(p1p0.num_pressure(), 2);
        let mini = DofMap::new(&SchemeSpec::mini(), &mesh);
        assert_eq!(mini.num_velocity(), 12);
        assert_eq!(mini.free_velocity_dofs().len(), 4);
        for family in [Family::TaylorHood, Family::Mini, Family::StabP1P0] {
            let scheme = SchemeSpec { family, stab: None };
            assert_eq!(DofMap::count(family, &mesh), DofMap::new(&scheme, &mesh).ndof());
        }
    }

    #[test]
    fn stabilization_parameters_validated() {
        assert!(SchemeSpec::stabilized(0, StabParams { tau_s: 0.0, ..Default::default() }).is_err());
        assert!(SchemeSpec::stabilized(1, StabParams::default()).is_err());
        assert!(SchemeSpec::stabilized(1, StabParams { tau_t: 0.1, ..Default::default() }).is_ok());
        assert!(SchemeSpec::stabilized(2, StabParams::default()).is_err());
    }

    #[test]
    fn global_basis_is_continuous_across_edges() {
        let mesh = square(2).bisect(&[0, 5]).unwrap();
        let rule = crate::quadrature::EdgeRule::default();
        for family in [Family::TaylorHood, Family::Mini, Family::StabP1P0] {
            let scheme = SchemeSpec { family, stab: None };
            let dofs = DofMap::new(&scheme, &mesh);
            for e in 0..mesh.num_edges() {
                let (t0, Some(t1)) = mesh.edge_elements(e) else { continue };
                let [a, b] = mesh.edges()[e];
                for x in rule.points(&mesh.vertices()[a], &mesh.vertices()[b]) {
                    let trace = |t: usize, s: usize| {
                        let basis = basis_eval(&scheme, &mesh, t, &x).unwrap();
                        dofs.velocity_dofs(t)
                            .iter()
                            .position(|&d| d == s)
                            .map_or(0.0, |i| basis.velocity.values[i])
                    };
                    for &s in dofs.velocity_dofs(t0).iter().chain(dofs.velocity_dofs(t1)) {
                        assert!((trace(t0, s) - trace(t1, s)).abs() < 1e-13);
                    }
                }
            }
        }
    }
}
