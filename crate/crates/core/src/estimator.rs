//! Weighted residual error indicators.
//!
//! For an element `T` with diameter `h`, distance scale `D` and weight `w`,
//!
//! ```text
//! eta_T^2 = h^2 D^a |lap u_h - grad p_h|^2_T
//!         + k |div u_h|^2_{w,T}
//!         + h D^a sum_{S interior edge of T} |[(grad u_h - p_h I) n]|^2_S
//!         + sum_{z in closed T} h^a |F_z|^2
//! ```
//!
//! where `k = 1 + tau_div^2` for the stabilized pairs and `k = 1` otherwise.
//! Every interior edge contributes to both of its elements.

use crate::assembly::PointSource;
use crate::elements::Family;
use crate::error::{input_error, Result};
use crate::field::{DiscreteField, PointValue};
use crate::mesh::{Point, Vector};
use crate::quadrature::{weighted_cell_integral, EdgeRule, QuadratureRule, WeightSpec, ESTIMATOR_TOL};

/// Per-element indicators `eta_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorField {
    values: Vec<f64>,
    family: Family,
    weight: WeightSpec,
}

impl IndicatorField {
    pub fn new(values: Vec<f64>, family: Family, weight: WeightSpec) -> Self {
        assert!(values.iter().all(|&v| v >= 0.0), "indicators are nonnegative");
        Self { values, family, weight }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn weight(&self) -> &WeightSpec {
        &self.weight
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// `sqrt(sum eta_T^2)`
    pub fn global(&self) -> f64 {
        global_estimator(&self.values)
    }

    /// Lines `element_id eta`.
    pub fn dump(&self) -> String {
        self.values.iter().enumerate().map(|(t, eta)| format!("{t} {eta:e}\n")).collect()
    }
}

/// Root of the sum of squares, accumulated in element order.
pub fn global_estimator(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Jump of the normal flux `(grad u_h - p_h I) n` across interior edge `e`,
/// at the points of `rule` along the edge.
///
/// The jump is the sum of the one-sided fluxes, each taken with the outward
/// normal of its own element, so it does not depend on which side is first.
pub fn jump_trace(field: &DiscreteField<'_>, e: usize, rule: &EdgeRule) -> Result<Vec<(Point, Vector)>> {
    let mesh = field.mesh;
    let (t0, Some(t1)) = mesh.edge_elements(e) else {
        return input_error(format!("edge {e} is on the boundary"));
    };
    let [a, b] = mesh.edges()[e];
    let (va, vb) = (mesh.vertices()[a], mesh.vertices()[b]);
    let n0 = mesh.outward_normal(t0, local_edge(field, t0, e));
    let n1 = mesh.outward_normal(t1, local_edge(field, t1, e));
    Ok(rule
        .points(&va, &vb)
        .into_iter()
        .map(|x| {
            (x, flux_jump(&field.eval_extended(t0, &x), &n0, &field.eval_extended(t1, &x), &n1))
        })
        .collect())
}

/// `(grad u^+ - p^+ I) n^+ + (grad u^- - p^- I) n^-`
pub fn flux_jump(plus: &PointValue, n_plus: &Vector, minus: &PointValue, n_minus: &Vector) -> Vector {
    plus.flux(n_plus) + minus.flux(n_minus)
}

fn local_edge(field: &DiscreteField<'_>, t: usize, e: usize) -> usize {
    field.mesh.element_edges(t).iter().position(|&f| f == e).expect("edge belongs to element")
}

/// `int_S |jump|^2` for every edge; zero on boundary edges.
fn edge_jumps(field: &DiscreteField<'_>) -> Vec<f64> {
    let mesh = field.mesh;
    let rule = EdgeRule::default();
    (0..mesh.num_edges())
        .map(|e| {
            if mesh.is_boundary_edge(e) {
                return 0.0;
            }
            let len = mesh.edge_length(e);
            let trace = jump_trace(field, e, &rule).expect("interior edge");
            trace.iter().zip(&rule.weights).map(|((_, j), w)| w * j.norm_squared()).sum::<f64>() * len
        })
        .collect()
}

fn interior_rule() -> &'static QuadratureRule {
    static RULE: std::sync::OnceLock<QuadratureRule> = std::sync::OnceLock::new();
    RULE.get_or_init(|| QuadratureRule::triangle(4))
}

fn indicator_squared(
    field: &DiscreteField<'_>,
    weight: &WeightSpec,
    sources: &[PointSource],
    t: usize,
    jumps: &[f64],
) -> f64 {
    let mesh = field.mesh;
    let geo = mesh.element_geometry(t, weight);
    let alpha = weight.alpha;
    let d_alpha = geo.d.powf(alpha);
    let tri = mesh.element_points(t);

    let residual = interior_rule().integrate(&tri, |x| {
        let v = field.eval_extended(t, x);
        (v.laplacian_u - v.grad_p).norm_squared()
    });
    let stab = field.scheme.stab_or_zero();
    let kappa = if field.scheme.family.is_stabilized() { 1.0 + stab.tau_div * stab.tau_div } else { 1.0 };
    let div = weighted_cell_integral(mesh, t, weight, |x| field.eval_extended(t, x).divergence().powi(2), ESTIMATOR_TOL)
        .value;
    let jump: f64 = mesh.element_edges(t).iter().map(|&e| jumps[e]).sum();
    let source: f64 = sources
        .iter()
        .filter(|s| mesh.contains(t, &s.z))
        .map(|s| geo.h.powf(alpha) * s.force.norm_squared())
        .sum();

    geo.h * geo.h * d_alpha * residual + kappa * div + geo.h * d_alpha * jump + source
}

/// `eta_T` of a single element.
pub fn element_indicator(field: &DiscreteField<'_>, weight: &WeightSpec, sources: &[PointSource], t: usize) -> f64 {
    let mesh = field.mesh;
    let rule = EdgeRule::default();
    let jumps: Vec<f64> = (0..mesh.num_edges())
        .map(|e| {
            if mesh.is_boundary_edge(e) || !mesh.element_edges(t).contains(&e) {
                return 0.0;
            }
            let trace = jump_trace(field, e, &rule).expect("interior edge");
            trace.iter().zip(&rule.weights).map(|((_, j), w)| w * j.norm_squared()).sum::<f64>() * mesh.edge_length(e)
        })
        .collect();
    indicator_squared(field, weight, sources, t, &jumps).sqrt()
}

/// Indicators of all elements.
pub fn estimate(field: &DiscreteField<'_>, weight: &WeightSpec, sources: &[PointSource]) -> IndicatorField {
    let jumps = edge_jumps(field);
    let values =
        (0..field.mesh.num_elements()).map(|t| indicator_squared(field, weight, sources, t, &jumps).sqrt()).collect();
    IndicatorField::new(values, field.scheme.family, weight.clone())
}
