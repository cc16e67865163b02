//! The Stokeslet, i.e. the fundamental solution of the Stokes problem for a
//! point force, and the weighted true error of a discrete solution.

use std::f64::consts::PI;

use nalgebra::Matrix2;

use crate::error::{AfemError, Result};
use crate::field::DiscreteField;
use crate::mesh::{Point, Vector};
use crate::quadrature::{weighted_cell_integral, WeightSpec, ERROR_TOL};

/// A point force `force * delta_z` in the whole plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StokesletSpec {
    pub z: Point,
    pub force: Vector,
}

/// Velocity and pressure of the Stokeslet at `x`.
///
/// With `x0 = x - z` and `r = |x0|`:
/// `u = -(1/4pi) (log r I - x0 x0^T / r^2) F`, `p = x0 . F / (2 pi r^2)`.
pub fn stokeslet(spec: &StokesletSpec, x: &Point) -> Result<(Vector, f64)> {
    let x0 = offset(spec, x)?;
    let r2 = x0.norm_squared();
    let f = spec.force;
    let xf = x0.dot(&f);
    let u = -(f * (0.5 * r2.ln()) - x0 * (xf / r2)) / (4.0 * PI);
    Ok((u, xf / (2.0 * PI * r2)))
}

/// Velocity gradient `G[(i, j)] = d u_i / d x_j` of the Stokeslet.
pub fn stokeslet_gradient(spec: &StokesletSpec, x: &Point) -> Result<Matrix2<f64>> {
    let x0 = offset(spec, x)?;
    let r2 = x0.norm_squared();
    let f = spec.force;
    let xf = x0.dot(&f);
    let g = Matrix2::from_fn(|i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        x0[j] * f[i] / r2 - (delta * xf + x0[i] * f[j]) / r2 + 2.0 * x0[i] * x0[j] * xf / (r2 * r2)
    });
    Ok(-g / (4.0 * PI))
}

fn offset(spec: &StokesletSpec, x: &Point) -> Result<Vector> {
    let x0 = x - spec.z;
    if x0.norm_squared() == 0.0 {
        return Err(AfemError::Singularity { x: x.x, y: x.y });
    }
    Ok(x0)
}

/// Weighted errors: `err_u` in the weighted H^1 seminorm, `err_p` in the
/// weighted L^2 quotient norm modulo constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedError {
    pub err_u: f64,
    pub err_p: f64,
    pub total: f64,
}

/// Weighted error of `field` against the Stokeslet of `spec`.
pub fn weighted_error(field: &DiscreteField<'_>, spec: &StokesletSpec, weight: &WeightSpec) -> WeightedError {
    weighted_error_against(field, weight, |x| {
        // the source itself is a null set; quadrature nodes never land on it
        let grad = stokeslet_gradient(spec, x).ok()?;
        let (_, p) = stokeslet(spec, x).ok()?;
        Some((grad, p))
    })
}

/// Weighted error against an arbitrary exact solution given as
/// `x -> (grad u, p)`; `None` marks a point where it is undefined, which is
/// then skipped.
pub fn weighted_error_against(
    field: &DiscreteField<'_>,
    weight: &WeightSpec,
    exact: impl Fn(&Point) -> Option<(Matrix2<f64>, f64)>,
) -> WeightedError {
    let mesh = field.mesh;
    let integrate = |t: usize, f: &dyn Fn(&Point) -> f64| weighted_cell_integral(mesh, t, weight, f, ERROR_TOL).value;

    let mut grad_sq = 0.0;
    let mut pressure_diff = 0.0;
    let mut weight_total = 0.0;
    for t in 0..mesh.num_elements() {
        grad_sq += integrate(t, &|x| match exact(x) {
            Some((g, _)) => (g - field.eval_extended(t, x).grad_u).norm_squared(),
            None => 0.0,
        });
        pressure_diff += integrate(t, &|x| match exact(x) {
            Some((_, p)) => p - field.eval_extended(t, x).p,
            None => 0.0,
        });
        weight_total += integrate(t, &|_| 1.0);
    }
    // weighted mean realizes the quotient norm
    let shift = pressure_diff / weight_total;
    let mut pressure_sq = 0.0;
    for t in 0..mesh.num_elements() {
        pressure_sq += integrate(t, &|x| match exact(x) {
            Some((_, p)) => (p - field.eval_extended(t, x).p - shift).powi(2),
            None => 0.0,
        });
    }
    let (err_u, err_p) = (grad_sq.max(0.0).sqrt(), pressure_sq.max(0.0).sqrt());
    WeightedError { err_u, err_p, total: err_u.hypot(err_p) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{apply_dirichlet, assemble};
    use crate::elements::{DofMap, SchemeSpec};
    use crate::mesh::{DomainSpec, Mesh};
    use crate::solver::{solve_saddle, Solution};
    use approx::assert_relative_eq;

    fn example() -> StokesletSpec {
        StokesletSpec { z: Point::new(0.5, 0.5), force: Vector::new(1.0, 1.0) }
    }

    #[test]
    fn reference_values() {
        // mpmath at 30 digits; p = 1/pi
        let (u, p) = stokeslet(&example(), &Point::new(1.0, 0.5)).unwrap();
        assert_relative_eq!(u.x, 0.134736371584110566, max_relative = 1e-12);
        assert_relative_eq!(u.y, 0.0551589000381628983, max_relative = 1e-12);
        assert_relative_eq!(p, 0.318309886183791, max_relative = 1e-12);
    }

    #[test]
    fn singular_at_source() {
        assert!(matches!(stokeslet(&example(), &Point::new(0.5, 0.5)), Err(AfemError::Singularity { .. })));
        assert!(stokeslet_gradient(&example(), &Point::new(0.5, 0.5)).is_err());
    }

    #[test]
    fn pressure_is_odd() {
        let s = example();
        for r in [Vector::new(0.1, 0.0), Vector::new(-0.3, 0.2), Vector::new(1e-3, 7.0)] {
            let (_, a) = stokeslet(&s, &(s.z + r)).unwrap();
            let (_, b) = stokeslet(&s, &(s.z - r)).unwrap();
            assert_relative_eq!(a, -b, max_relative = 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = StokesletSpec { z: Point::new(0.3, 0.6), force: Vector::new(-0.7, 2.0) };
        let x = Point::new(0.9, 0.2);
        let g = stokeslet_gradient(&s, &x).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let e = Vector::from_fn(|k, _| if k == j { h } else { 0.0 });
            let d = (stokeslet(&s, &(x + e)).unwrap().0 - stokeslet(&s, &(x - e)).unwrap().0) / (2.0 * h);
            for i in 0..2 {
                assert!((g[(i, j)] - d[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn divergence_free() {
        let s = example();
        let x = Point::new(1.0, 0.5);
        let h = 1e-4;
        let u = |dx: f64, dy: f64| stokeslet(&s, &Point::new(x.x + dx, x.y + dy)).unwrap().0;
        let div = (u(h, 0.0).x - u(-h, 0.0).x) / (2.0 * h) + (u(0.0, h).y - u(0.0, -h).y) / (2.0 * h);
        assert!(div.abs() <= 1e-6, "{div}");
    }

    fn solved(mesh: &Mesh, scheme: &SchemeSpec, g: impl Fn(&Point) -> Vector) -> (DofMap, Solution) {
        let dofs = DofMap::new(scheme, mesh);
        let sys = assemble(mesh, scheme, &dofs);
        let c = apply_dirichlet(&sys, &dofs, &dofs.boundary_values(g)).unwrap();
        let s = solve_saddle(&c).unwrap();
        (dofs, s)
    }

    #[test]
    fn affine_field_has_zero_error_modulo_constants() {
        let mesh = Mesh::initial(&DomainSpec::unit_square(2).unwrap());
        let scheme = SchemeSpec::taylor_hood();
        let (dofs, sol) = solved(&mesh, &scheme, |x| Vector::new(x.y, x.x));
        let field = DiscreteField::new(&mesh, &scheme, &dofs, &sol);
        let w = WeightSpec::single(1.0, Point::new(0.4, 0.7));
        let grad = Matrix2::new(0.0, 1.0, 1.0, 0.0);
        let e = weighted_error_against(&field, &w, |_| Some((grad, 3.0)));
        assert!(e.err_u <= 1e-10 && e.err_p <= 1e-10, "{e:?}");
    }

    #[test]
    fn pressure_shift_invariance() {
        let mesh = Mesh::initial(&DomainSpec::unit_square(2).unwrap());
        let scheme = SchemeSpec::taylor_hood();
        let spec = example();
        let g = |x: &Point| stokeslet(&spec, x).unwrap().0;
        let (dofs, mut sol) = solved(&mesh, &scheme, g);
        sol.velocity.iter_mut().for_each(|v| *v *= 0.5);
        let w = WeightSpec::single(1.5, spec.z);
        let before = weighted_error(&DiscreteField::new(&mesh, &scheme, &dofs, &sol), &spec, &w);
        sol.pressure.iter_mut().for_each(|p| *p += 5.0);
        let after = weighted_error(&DiscreteField::new(&mesh, &scheme, &dofs, &sol), &spec, &w);
        assert!((before.err_p - after.err_p).abs() <= 1e-12 * before.err_p.max(1.0), "{before:?} {after:?}");
        assert_eq!(before.err_u, after.err_u);
    }

    #[test]
    fn smooth_error_against_composite_rule() {
        let mesh = Mesh::initial(&DomainSpec::unit_square(2).unwrap());
        let scheme = SchemeSpec::taylor_hood();
        let (dofs, sol) = solved(&mesh, &scheme, |_| Vector::zeros());
        let field = DiscreteField::new(&mesh, &scheme, &dofs, &sol);
        let z = Point::new(0.3, 0.45);
        let w = WeightSpec::single(1.0, z);
        // u = (sin(pi x) y, x^2), grad u = [[pi cos(pi x) y, sin(pi x)], [2x, 0]]
        let grad = |x: &Point| Matrix2::new(PI * (PI * x.x).cos() * x.y, (PI * x.x).sin(), 2.0 * x.x, 0.0);
        let e = weighted_error_against(&field, &w, |x| Some((grad(x), 0.0)));

        // oracle: midpoint rule on a 1000 x 1000 grid
        let n = 1000;
        let h = 1.0 / n as f64;
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = Point::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                sum += (x - z).norm() * grad(&x).norm_squared() * h * h;
            }
        }
        assert_relative_eq!(e.err_u, sum.sqrt(), max_relative = 1e-3);
        assert_eq!(e.err_p, 0.0);
    }

    #[test]
    fn pde_residual_vanishes_away_from_source() {
        let s = example();
        let h = 1e-3;
        for x in [Point::new(0.9, 0.5), Point::new(0.1, 0.1), Point::new(0.5, 0.8), Point::new(0.75, 0.2)] {
            let u = |dx: f64, dy: f64| stokeslet(&s, &Point::new(x.x + dx, x.y + dy)).unwrap();
            let lap = (u(h, 0.0).0 + u(-h, 0.0).0 + u(0.0, h).0 + u(0.0, -h).0 - u(0.0, 0.0).0 * 4.0) / (h * h);
            let grad_p = Vector::new(u(h, 0.0).1 - u(-h, 0.0).1, u(0.0, h).1 - u(0.0, -h).1) / (2.0 * h);
            let scale = stokeslet_gradient(&s, &x).unwrap().norm().max(1.0);
            let r = -lap + grad_p;
            assert!(r.norm() <= 1e-4 * scale, "{x:?}: {}", r.norm());
        }
    }
}
