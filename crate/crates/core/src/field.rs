//! Pointwise evaluation of a discrete solution.

use nalgebra::Matrix2;

use crate::elements::{basis_eval, DofMap, LocalBasis, SchemeSpec, SpaceValues};
use crate::error::Result;
use crate::mesh::{Mesh, Point, Vector};
use crate::solver::Solution;

/// Values of `(u_h, p_h)` and their derivatives at one point, restricted to
/// one element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointValue {
    pub u: Vector,
    /// `grad_u[(i, j)] = d u_i / d x_j`
    pub grad_u: Matrix2<f64>,
    pub laplacian_u: Vector,
    pub p: f64,
    pub grad_p: Vector,
}

impl PointValue {
    pub fn zero() -> Self {
        Self {
            u: Vector::zeros(),
            grad_u: Matrix2::zeros(),
            laplacian_u: Vector::zeros(),
            p: 0.0,
            grad_p: Vector::zeros(),
        }
    }

    pub fn divergence(&self) -> f64 {
        self.grad_u.trace()
    }

    /// Normal flux `(grad u - p I) nu`.
    pub fn flux(&self, normal: &Vector) -> Vector {
        self.grad_u * normal - normal * self.p
    }
}

/// A discrete velocity–pressure pair tied to its mesh and dof map.
#[derive(Clone, Copy, Debug)]
pub struct DiscreteField<'a> {
    pub mesh: &'a Mesh,
    pub scheme: &'a SchemeSpec,
    pub dofs: &'a DofMap,
    pub solution: &'a Solution,
}

impl<'a> DiscreteField<'a> {
    pub fn new(mesh: &'a Mesh, scheme: &'a SchemeSpec, dofs: &'a DofMap, solution: &'a Solution) -> Self {
        Self { mesh, scheme, dofs, solution }
    }

    /// Evaluates the restriction to element `t` at `x` (in the closure of `t`).
    pub fn eval(&self, t: usize, x: &Point) -> Result<PointValue> {
        Ok(self.combine(t, &basis_eval(self.scheme, self.mesh, t, x)?))
    }

    /// Like [`DiscreteField::eval`] but extends the polynomial on `t` to any
    /// point; used by quadrature whose nodes may sit a rounding error outside.
    pub(crate) fn eval_extended(&self, t: usize, x: &Point) -> PointValue {
        let l = self.mesh.barycentric(t, x);
        let grad_l = self.mesh.barycentric_gradients(t);
        let family = self.scheme.family;
        let basis = LocalBasis {
            velocity: SpaceValues::eval(family.velocity_space(), &l, &grad_l),
            pressure: SpaceValues::eval(family.pressure_space(), &l, &grad_l),
        };
        self.combine(t, &basis)
    }

    fn combine(&self, t: usize, basis: &LocalBasis) -> PointValue {
        let n = self.dofs.num_scalar_velocity();
        let u = &self.solution.velocity;
        let mut out = PointValue::zero();
        let v = &basis.velocity;
        for (k, &s) in self.dofs.velocity_dofs(t).iter().enumerate() {
            let c = Vector::new(u[s], u[n + s]);
            out.u += c * v.values[k];
            out.grad_u += c * v.gradients[k].transpose();
            out.laplacian_u += c * v.laplacians[k];
        }
        let q = &basis.pressure;
        for (k, &d) in self.dofs.pressure_dofs(t).iter().enumerate() {
            let pk = self.solution.pressure[d];
            out.p += pk * q.values[k];
            out.grad_p += q.gradients[k] * pk;
        }
        out
    }
}
