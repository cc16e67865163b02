//! Direct solution of the constrained saddle-point system.
//!
//! The system
//!
//! ```text
//! [ A   B^T ] [u]   [f]
//! [ B   -M  ] [p] = [g]
//! ```
//!
//! determines `p` up to a constant. The component of `g` along the mean
//! functional `c` is removed first (this is exactly what a Lagrange multiplier
//! for `int p_h = 0` would absorb), one pressure unknown is pinned to zero, and
//! the pressure is shifted to mean zero afterwards. Pinning keeps the matrix
//! sparse; a dense multiplier row ruins the fill-reducing ordering.

use faer::linalg::solvers::Solve;
use faer::Mat;
use nalgebra::DMatrix;

use crate::assembly::ConstrainedSystem;
use crate::error::{AfemError, Result};
use crate::sparse::{SparseMatrix, TripletBuilder};

/// Relative residual accepted after refinement.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Systems below this size fall back to a dense full-pivot factorization
/// when the sparse one fails.
pub const DENSE_FALLBACK_LIMIT: usize = 2000;
const REFINEMENT_STEPS: usize = 5;

#[derive(Clone, Debug)]
pub struct Solution {
    /// All velocity coefficients, boundary values included.
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    /// Relative residual of the system with the mean-value multiplier.
    pub residual: f64,
    /// `int p_h` after normalization.
    pub pressure_mean: f64,
}

struct Coupled {
    matrix: SparseMatrix,
    rhs: Vec<f64>,
    nu: usize,
    np: usize,
}

fn coupled(sys: &ConstrainedSystem) -> Coupled {
    let nu = sys.a.nrows();
    let np = sys.b.nrows();
    let n = nu + np;
    // The pinned pressure unknown: row and column replaced by the identity.
    let pinned = (np > 0).then_some(nu);
    let keep = |r: usize, c: usize| pinned.map_or(true, |q| r != q && c != q);
    let mut k = TripletBuilder::new(n, n);
    for (r, c, v) in sys.a.iter() {
        k.push(r, c, v);
    }
    for (r, c, v) in sys.b.iter() {
        if keep(nu + r, c) {
            k.push(nu + r, c, v);
            k.push(c, nu + r, v);
        }
    }
    for (r, c, v) in sys.m.iter() {
        if keep(nu + r, nu + c) {
            k.push(nu + r, nu + c, -v);
        }
    }
    let mut rhs = sys.rhs_velocity.clone();
    rhs.extend_from_slice(&sys.rhs_pressure);
    if let Some(q) = pinned {
        k.push(q, q, 1.0);
        let area: f64 = sys.mean.iter().sum();
        if area > 0.0 {
            let lambda = sys.rhs_pressure.iter().sum::<f64>() / area;
            rhs[nu..].iter_mut().zip(&sys.mean).for_each(|(r, c)| *r -= lambda * c);
        }
        rhs[q] = 0.0;
    }
    Coupled { matrix: k.build(), rhs, nu, np }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual(k: &SparseMatrix, x: &[f64], rhs: &[f64]) -> Vec<f64> {
    k.mul_vec(x).iter().zip(rhs).map(|(kx, r)| r - kx).collect()
}

/// Factorization of the coupled matrix, sparse or dense.
enum Factor {
    Sparse(faer::sparse::linalg::solvers::Lu<usize, f64>),
    Dense(nalgebra::linalg::FullPivLU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    fn new(k: &SparseMatrix) -> Result<Self> {
        match k.to_faer().sp_lu() {
            Ok(lu) => Ok(Factor::Sparse(lu)),
            Err(e) if k.nrows() < DENSE_FALLBACK_LIMIT => {
                log::warn!("sparse LU failed ({e:?}), using dense factorization");
                Ok(Factor::dense(k))
            }
            Err(e) => Err(AfemError::Solver(format!("sparse LU failed: {e:?}"))),
        }
    }

    fn dense(k: &SparseMatrix) -> Self {
        let mut d = DMatrix::zeros(k.nrows(), k.ncols());
        for (r, c, v) in k.iter() {
            d[(r, c)] = v;
        }
        Factor::Dense(d.full_piv_lu())
    }

    fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let x: Vec<f64> = match self {
            Factor::Sparse(lu) => {
                let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
                let x = lu.solve(&rhs);
                (0..b.len()).map(|i| x[(i, 0)]).collect()
            }
            Factor::Dense(lu) => lu.solve(&nalgebra::DVector::from_column_slice(b))?.iter().copied().collect(),
        };
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

fn refine(factor: &Factor, k: &SparseMatrix, rhs: &[f64]) -> Option<(Vec<f64>, f64)> {
    let scale = norm(rhs);
    let mut x = factor.solve(rhs)?;
    let mut rel = norm(&residual(k, &x, rhs)) / scale;
    for _ in 0..REFINEMENT_STEPS {
        if rel <= RESIDUAL_TOL * 1e-2 {
            break;
        }
        let r = residual(k, &x, rhs);
        let dx = factor.solve(&r)?;
        let candidate: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let next = norm(&residual(k, &candidate, rhs)) / scale;
        if !(next < rel) {
            break;
        }
        x = candidate;
        rel = next;
    }
    Some((x, rel))
}

/// Solves the constrained system and returns the full velocity vector and a
/// mean-free pressure.
pub fn solve_saddle(sys: &ConstrainedSystem) -> Result<Solution> {
    let c = coupled(sys);
    let scale = norm(&c.rhs);
    let (x, rel) = if scale == 0.0 {
        (vec![0.0; c.rhs.len()], 0.0)
    } else {
        let clock = std::time::Instant::now();
        let factor = Factor::new(&c.matrix)?;
        let factored = clock.elapsed();
        let attempt = refine(&factor, &c.matrix, &c.rhs);
        log::debug!("factorization {factored:?}, refinement {:?}", clock.elapsed() - factored);
        match attempt {
            Some((x, rel)) if rel <= RESIDUAL_TOL => (x, rel),
            _ if c.matrix.nrows() < DENSE_FALLBACK_LIMIT && matches!(factor, Factor::Sparse(_)) => {
                log::warn!("sparse solve inaccurate, retrying with dense factorization");
                refine(&Factor::dense(&c.matrix), &c.matrix, &c.rhs)
                    .filter(|&(_, rel)| rel <= RESIDUAL_TOL)
                    .ok_or_else(|| AfemError::Solver("dense solve did not reach the residual tolerance".into()))?
            }
            Some((_, rel)) => {
                return Err(AfemError::Solver(format!("relative residual {rel:.3e} exceeds {RESIDUAL_TOL:.0e}")))
            }
            None => return Err(AfemError::Solver("factorization produced non-finite values".into())),
        }
    };

    let mut pressure = x[c.nu..c.nu + c.np].to_vec();
    // Constants lie in the kernel of B^T (on free rows) and of M, so shifting
    // leaves the discrete equations unchanged. The pinned representative can be
    // far from mean zero; a second pass removes what the first one rounded off.
    let area: f64 = sys.mean.iter().sum();
    if area > 0.0 {
        for _ in 0..2 {
            let shift = dot(&sys.mean, &pressure) / area;
            pressure.iter_mut().for_each(|p| *p -= shift);
        }
    }
    let velocity = &x[..c.nu];
    let rel = if scale == 0.0 { rel } else { augmented_residual(sys, velocity, &pressure) };
    if rel > RESIDUAL_TOL {
        return Err(AfemError::Solver(format!("relative residual {rel:.3e} exceeds {RESIDUAL_TOL:.0e}")));
    }
    Ok(Solution {
        velocity: sys.expand_velocity(velocity),
        pressure_mean: dot(&sys.mean, &pressure),
        pressure,
        residual: rel,
    })
}

/// Relative residual of the system with the multiplier row and column
/// `[A B^T 0; B -M c; 0 c^T 0]`, the multiplier taking its exact value.
fn augmented_residual(sys: &ConstrainedSystem, u: &[f64], p: &[f64]) -> f64 {
    let area: f64 = sys.mean.iter().sum();
    let lambda = if area > 0.0 { sys.rhs_pressure.iter().sum::<f64>() / area } else { 0.0 };
    let mut r = sys.a.mul_vec(u);
    for (ri, (bt, f)) in r.iter_mut().zip(sys.b.mul_transpose_vec(p).iter().zip(&sys.rhs_velocity)) {
        *ri += bt - f;
    }
    let mp = sys.m.mul_vec(p);
    for (i, bu) in sys.b.mul_vec(u).into_iter().enumerate() {
        r.push(bu - mp[i] + sys.mean[i] * lambda - sys.rhs_pressure[i]);
    }
    if !p.is_empty() {
        r.push(dot(&sys.mean, p));
    }
    let scale = norm(&sys.rhs_velocity).hypot(norm(&sys.rhs_pressure));
    norm(&r) / scale
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{apply_dirichlet, assemble};
    use crate::elements::{DofMap, SchemeSpec, StabParams};
    use crate::mesh::{DomainSpec, Mesh, Vector};
    use approx::assert_relative_eq;

    fn tiny(a: f64, f: f64) -> ConstrainedSystem {
        let mut ab = TripletBuilder::new(1, 1);
        ab.push(0, 0, a);
        ConstrainedSystem {
            a: ab.build(),
            b: SparseMatrix::zeros(0, 1),
            m: SparseMatrix::zeros(0, 0),
            mean: vec![],
            rhs_velocity: vec![f],
            rhs_pressure: vec![],
            free: vec![0],
            boundary: vec![],
            boundary_values: vec![],
            num_velocity: 1,
        }
    }

    #[test]
    fn one_by_one() {
        let s = solve_saddle(&tiny(2.0, 3.0)).unwrap();
        assert_eq!(s.velocity, vec![1.5]);
        assert!(s.pressure.is_empty());
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let s = solve_saddle(&tiny(2.0, 0.0)).unwrap();
        assert_eq!(s.velocity, vec![0.0]);
        assert_eq!(s.residual, 0.0);
    }

    fn schemes() -> Vec<SchemeSpec> {
        vec![
            SchemeSpec::taylor_hood(),
            SchemeSpec::mini(),
            SchemeSpec::stabilized(0, StabParams::default()).unwrap(),
            SchemeSpec::stabilized(1, StabParams { tau_div: 0.0, tau_t: 0.1, tau_s: 1.0 / 12.0 }).unwrap(),
        ]
    }

    #[test]
    fn affine_solution_is_reproduced() {
        // u = (y, x) is harmonic, divergence free, and paired with p = 0.
        let mesh = Mesh::initial(&DomainSpec::unit_square(3).unwrap()).bisect(&[0, 5]).unwrap();
        let exact = |x: &crate::mesh::Point| Vector::new(x.y, x.x);
        for scheme in schemes() {
            let dofs = DofMap::new(&scheme, &mesh);
            let sys = assemble(&mesh, &scheme, &dofs);
            let constrained = apply_dirichlet(&sys, &dofs, &dofs.boundary_values(exact)).unwrap();
            let s = solve_saddle(&constrained).unwrap();
            let want = dofs.interpolate_velocity(exact);
            for (a, b) in s.velocity.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{:?}: {a} vs {b}", scheme.family);
            }
            assert!(s.pressure.iter().all(|p| p.abs() < 1e-10));
            assert!(s.residual <= RESIDUAL_TOL);
            assert!(s.pressure_mean.abs() < 1e-12);
        }
    }

    #[test]
    fn solution_scales_with_data() {
        let mesh = Mesh::initial(&DomainSpec::unit_square(4).unwrap());
        let scheme = SchemeSpec::taylor_hood();
        let dofs = DofMap::new(&scheme, &mesh);
        let mut sys = assemble(&mesh, &scheme, &dofs);
        sys.load = (0..dofs.num_velocity()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let g = vec![0.0; dofs.boundary_velocity_dofs().len()];
        let base = solve_saddle(&apply_dirichlet(&sys, &dofs, &g).unwrap()).unwrap();
        sys.load.iter_mut().for_each(|v| *v *= -3.0);
        let scaled = solve_saddle(&apply_dirichlet(&sys, &dofs, &g).unwrap()).unwrap();
        for (a, b) in base.velocity.iter().zip(&scaled.velocity) {
            assert_relative_eq!(-3.0 * a, b, epsilon = 1e-11);
        }
        for (a, b) in base.pressure.iter().zip(&scaled.pressure) {
            assert_relative_eq!(-3.0 * a, b, epsilon = 1e-10);
        }
        assert!(scaled.pressure_mean.abs() < 1e-12);
    }

    #[test]
    fn dense_fallback_matches_sparse() {
        let mesh = Mesh::initial(&DomainSpec::l_shape(2).unwrap());
        let scheme = SchemeSpec::mini();
        let dofs = DofMap::new(&scheme, &mesh);
        let mut sys = assemble(&mesh, &scheme, &dofs);
        sys.load = (0..dofs.num_velocity()).map(|i| (i as f64).sin()).collect();
        let g = vec![0.0; dofs.boundary_velocity_dofs().len()];
        let c = coupled(&apply_dirichlet(&sys, &dofs, &g).unwrap());
        let sparse = refine(&Factor::new(&c.matrix).unwrap(), &c.matrix, &c.rhs).unwrap();
        let dense = refine(&Factor::dense(&c.matrix), &c.matrix, &c.rhs).unwrap();
        assert!(sparse.1 < RESIDUAL_TOL && dense.1 < RESIDUAL_TOL);
        for (a, b) in sparse.0.iter().zip(&dense.0) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
