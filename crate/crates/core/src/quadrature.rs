//! Integration on triangles and edges, including integrands carrying the
//! singular distance weight `|x - z|^alpha` and its multi-source variant.

use std::f64::consts::PI;

use crate::error::{input_error, AfemError, Result};
use crate::mesh::{barycentric, cross, DomainSpec, Mesh, Point, CONTAINMENT_TOL};

/// Default relative tolerance for estimator integrals.
pub const ESTIMATOR_TOL: f64 = 1e-8;
/// Default relative tolerance for error norms.
pub const ERROR_TOL: f64 = 1e-10;
/// Maximum number of geometric shells toward a singular point.
pub const MAX_LEVELS: usize = 40;
/// Maximum recursion depth when resolving the jump of the multi-source weight.
const MAX_CUT_DEPTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    /// `|x - z|^alpha`
    Single,
    /// `|x - z|^alpha` within `d_Z / 2` of some source `z`, and 1 elsewhere.
    Multi,
}

/// Description of the power weight attached to one or several point sources.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSpec {
    pub mode: WeightMode,
    pub alpha: f64,
    pub sources: Vec<Point>,
    /// Separation length of the sources (multi mode only).
    pub d_z: f64,
}

impl WeightSpec {
    /// `|x - z|^alpha`. Any exponent with a locally integrable weight,
    /// `alpha > -2`, is accepted; negative ones give the dual weight.
    pub fn single(alpha: f64, z: Point) -> Self {
        assert!(alpha > -2.0 && alpha.is_finite(), "weight exponent {alpha} is not above -2");
        Self { mode: WeightMode::Single, alpha, sources: vec![z], d_z: f64::INFINITY }
    }

    /// Multi-source weight with an explicit separation length.
    pub fn multi(alpha: f64, sources: Vec<Point>, d_z: f64) -> Result<Self> {
        if sources.is_empty() {
            return input_error("multi-source weight needs at least one source");
        }
        if !(d_z > 0.0) {
            return input_error(format!("source separation must be positive, got {d_z}"));
        }
        if !(alpha > -2.0 && alpha.is_finite()) {
            return input_error(format!("weight exponent {alpha} is not above -2"));
        }
        Ok(Self { mode: WeightMode::Multi, alpha, sources, d_z })
    }

    /// Multi-source weight whose separation is the smaller of the distance of
    /// the sources to the boundary and their minimal pairwise distance.
    pub fn multi_for_domain(alpha: f64, sources: Vec<Point>, domain: &DomainSpec) -> Result<Self> {
        if let Some(z) = sources.iter().find(|z| !domain.contains_interior(z)) {
            return input_error(format!("source ({}, {}) is not interior to the domain", z.x, z.y));
        }
        let mut d = sources
            .iter()
            .map(|z| domain.distance_to_boundary(z))
            .fold(f64::INFINITY, f64::min);
        for (i, a) in sources.iter().enumerate() {
            for b in &sources[i + 1..] {
                d = d.min((a - b).norm());
            }
        }
        Self::multi(alpha, sources, d)
    }

    /// Weight for a source set: the plain distance weight for one source, the
    /// multi-source weight otherwise.
    pub fn for_sources(alpha: f64, sources: Vec<Point>, domain: &DomainSpec) -> Result<Self> {
        match sources.as_slice() {
            [z] => {
                if !domain.contains_interior(z) {
                    return input_error(format!("source ({}, {}) is not interior to the domain", z.x, z.y));
                }
                Ok(Self::single(alpha, *z))
            }
            _ => Self::multi_for_domain(alpha, sources, domain),
        }
    }

    pub fn nearest_source(&self, x: &Point) -> (Point, f64) {
        self.sources
            .iter()
            .map(|z| (*z, (x - z).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("weight has at least one source")
    }

    fn eval_unchecked(&self, x: &Point) -> f64 {
        let (_, r) = self.nearest_source(x);
        match self.mode {
            WeightMode::Multi if r >= 0.5 * self.d_z => 1.0,
            _ => r.powf(self.alpha),
        }
    }

    pub fn eval(&self, x: &Point) -> Result<f64> {
        let (_, r) = self.nearest_source(x);
        if r == 0.0 && self.alpha < 0.0 {
            return Err(AfemError::Singularity { x: x.x, y: x.y });
        }
        Ok(self.eval_unchecked(x))
    }

    /// `max_{x in T} |x - z|`, minimized over the sources. The inner maximum of
    /// a convex function over a triangle is attained at a vertex.
    pub fn distance_scale(&self, tri: &[Point; 3]) -> f64 {
        self.sources
            .iter()
            .map(|z| tri.iter().map(|v| (v - z).norm()).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`; the weights sum to one.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Triangle rule in barycentric coordinates, weights normalized to unit area.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// Collapsed (conical product) Gauss rule exact for polynomials of total
    /// degree `degree`. All points are interior and all weights positive.
    pub fn triangle(degree: usize) -> Self {
        let n = degree / 2 + 1;
        let (x, w) = gauss_legendre(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (u, wu) in x.iter().zip(&w) {
            for (v, wv) in x.iter().zip(&w) {
                // (u, v) in the unit square -> (s, t) = (u, v (1 - u)) in the reference triangle
                let s = *u;
                let t = v * (1.0 - u);
                points.push([1.0 - s - t, s, t]);
                weights.push(2.0 * wu * wv * (1.0 - u));
            }
        }
        Self { points, weights, degree }
    }

    /// `int_T f` for the physical triangle `tri`.
    pub fn integrate(&self, tri: &[Point; 3], f: impl Fn(&Point) -> f64) -> f64 {
        let area = triangle_area(tri);
        let sum: f64 = self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| w * f(&map_barycentric(tri, l)))
            .sum();
        area * sum
    }
}

/// Gauss–Legendre rule on a segment.
#[derive(Clone, Debug)]
pub struct EdgeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EdgeRule {
    /// `n` points, exact to degree `2n - 1`.
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Self { nodes, weights }
    }

    /// Points on the segment `a -> b`.
    pub fn points(&self, a: &Point, b: &Point) -> Vec<Point> {
        self.nodes.iter().map(|s| a + (b - a) * *s).collect()
    }

    pub fn integrate(&self, a: &Point, b: &Point, g: impl Fn(&Point) -> f64) -> f64 {
        let len = (b - a).norm();
        len * self.nodes.iter().zip(&self.weights).map(|(s, w)| w * g(&(a + (b - a) * *s))).sum::<f64>()
    }
}

impl Default for EdgeRule {
    /// Four points, exact to degree 7.
    fn default() -> Self {
        Self::new(4)
    }
}

/// `int_S g` over mesh edge `e`.
pub fn edge_integral(mesh: &Mesh, e: usize, g: impl Fn(&Point) -> f64) -> f64 {
    let [a, b] = mesh.edges()[e];
    EdgeRule::default().integrate(&mesh.vertices()[a], &mesh.vertices()[b], g)
}

pub(crate) fn map_barycentric(tri: &[Point; 3], l: &[f64; 3]) -> Point {
    Point::from(tri[0].coords * l[0] + tri[1].coords * l[1] + tri[2].coords * l[2])
}

pub(crate) fn triangle_area(tri: &[Point; 3]) -> f64 {
    0.5 * cross(&(tri[1] - tri[0]), &(tri[2] - tri[0])).abs()
}

fn triangle_diameter(tri: &[Point; 3]) -> f64 {
    (0..3).map(|k| (tri[(k + 1) % 3] - tri[k]).norm()).fold(0.0, f64::max)
}

/// Closest point of a closed triangle to `z`.
fn closest_point(tri: &[Point; 3], z: &Point) -> Point {
    if barycentric(tri, z).iter().all(|&l| l >= -CONTAINMENT_TOL) {
        return *z;
    }
    (0..3)
        .map(|k| {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let ab = b - a;
            let t = ((z - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            a + ab * t
        })
        .min_by(|p, q| (p - z).norm().total_cmp(&(q - z).norm()))
        .unwrap()
}

fn distance_to_triangle(tri: &[Point; 3], z: &Point) -> f64 {
    (closest_point(tri, z) - z).norm()
}

/// Result of a weighted integration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedIntegral {
    pub value: f64,
    /// False when the shell recursion hit [`MAX_LEVELS`] before the requested
    /// tolerance; the value then includes an extrapolated tail.
    pub converged: bool,
}

impl WeightedIntegral {
    fn add(self, other: Self) -> Self {
        Self { value: self.value + other.value, converged: self.converged && other.converged }
    }
}

/// `int_T w f` over mesh element `t`.
pub fn weighted_cell_integral(
    mesh: &Mesh,
    t: usize,
    weight: &WeightSpec,
    f: impl Fn(&Point) -> f64,
    tol: f64,
) -> WeightedIntegral {
    integrate_weighted(&mesh.element_points(t), weight, f, tol)
}

/// Rule used away from singular points and on every shell.
fn shell_rule() -> &'static QuadratureRule {
    static RULE: std::sync::OnceLock<QuadratureRule> = std::sync::OnceLock::new();
    RULE.get_or_init(|| QuadratureRule::triangle(10))
}

/// `int_T w f` over an arbitrary triangle.
///
/// When a source lies within one diameter of `T`, the triangle is split into
/// fans around the point of `T` closest to the source and each fan is
/// integrated over geometric shells of ratio 1/2. In multi-source mode,
/// triangles crossed by a weight discontinuity circle are first subdivided.
pub fn integrate_weighted(
    tri: &[Point; 3],
    weight: &WeightSpec,
    f: impl Fn(&Point) -> f64,
    tol: f64,
) -> WeightedIntegral {
    let g = |x: &Point| weight.eval_unchecked(x) * f(x);
    integrate_piece(tri, weight, &g, tol, 0)
}

fn integrate_piece(
    tri: &[Point; 3],
    weight: &WeightSpec,
    g: &dyn Fn(&Point) -> f64,
    tol: f64,
    depth: usize,
) -> WeightedIntegral {
    if weight.mode == WeightMode::Multi && depth < MAX_CUT_DEPTH && crosses_weight_jump(tri, weight) {
        let m = [
            nalgebra::center(&tri[1], &tri[2]),
            nalgebra::center(&tri[2], &tri[0]),
            nalgebra::center(&tri[0], &tri[1]),
        ];
        return [
            [tri[0], m[2], m[1]],
            [m[2], tri[1], m[0]],
            [m[1], m[0], tri[2]],
            [m[0], m[1], m[2]],
        ]
        .iter()
        .map(|child| integrate_piece(child, weight, g, tol, depth + 1))
        .fold(WeightedIntegral { value: 0.0, converged: true }, WeightedIntegral::add);
    }

    let h = triangle_diameter(tri);
    let (z, _) = weight.nearest_source(&closest_point_to_sources(tri, weight));
    let near = distance_to_triangle(tri, &z) <= h
        && !(weight.mode == WeightMode::Multi && distance_to_triangle(tri, &z) >= 0.5 * weight.d_z);
    if !near {
        return WeightedIntegral { value: shell_rule().integrate(tri, g), converged: true };
    }

    let focus = closest_point(tri, &z);
    let area = triangle_area(tri);
    let mut total = WeightedIntegral { value: 0.0, converged: true };
    for k in 0..3 {
        let fan = [focus, tri[k], tri[(k + 1) % 3]];
        if triangle_area(&fan) <= 1e-14 * area {
            continue;
        }
        for piece in narrow_fans(fan) {
            total = total.add(graded_fan(&piece, g, tol));
        }
    }
    total
}

/// Point of the triangle nearest to any source; used to pick the active source.
fn closest_point_to_sources(tri: &[Point; 3], weight: &WeightSpec) -> Point {
    weight
        .sources
        .iter()
        .map(|z| closest_point(tri, z))
        .zip(&weight.sources)
        .min_by(|(p, z), (q, y)| (p - *z).norm().total_cmp(&(q - *y).norm()))
        .map(|(p, _)| p)
        .unwrap()
}

fn crosses_weight_jump(tri: &[Point; 3], weight: &WeightSpec) -> bool {
    let r0 = 0.5 * weight.d_z;
    weight.sources.iter().any(|z| {
        let near = distance_to_triangle(tri, z);
        let far = tri.iter().map(|v| (v - z).norm()).fold(0.0, f64::max);
        near < r0 && far > r0
    })
}

/// Splits a fan `[apex, a, b]` until its apex angle is at most 60 degrees.
fn narrow_fans(fan: [Point; 3]) -> Vec<[Point; 3]> {
    let [p, a, b] = fan;
    let (u, v) = (a - p, b - p);
    let angle = cross(&u, &v).abs().atan2(u.dot(&v));
    if angle <= PI / 3.0 + 1e-9 {
        return vec![fan];
    }
    let m = nalgebra::center(&a, &b);
    let mut out = narrow_fans([p, a, m]);
    out.extend(narrow_fans([p, m, b]));
    out
}

/// Integrates over a fan `[apex, a, b]` with geometric shells toward the apex.
fn graded_fan(fan: &[Point; 3], g: &dyn Fn(&Point) -> f64, tol: f64) -> WeightedIntegral {
    let rule = shell_rule();
    let p = fan[0];
    let (mut a, mut b) = (fan[1], fan[2]);
    let mut acc = 0.0;
    // the two most recent shells, newest first
    let mut recent: [Option<f64>; 2] = [None, None];
    for _ in 0..MAX_LEVELS {
        let a2 = nalgebra::center(&p, &a);
        let b2 = nalgebra::center(&p, &b);
        let shell = rule.integrate(&[a, b, b2], g) + rule.integrate(&[a, b2, a2], g);
        acc += shell;
        a = a2;
        b = b2;
        if shell.abs() <= tol * acc.abs() {
            return WeightedIntegral { value: acc + tail(shell, recent[0], &[p, a, b], g), converged: true };
        }
        recent = [Some(shell), recent[0]];
    }
    let last = recent[0].expect("at least one level");
    WeightedIntegral { value: acc + tail(last, recent[1], &[p, a, b], g), converged: false }
}

/// Remaining contribution of the innermost triangle: geometric extrapolation
/// from the last two shells when their ratio is a contraction, else a direct
/// rule evaluation (the rule never samples the apex).
fn tail(last: f64, previous: Option<f64>, inner: &[Point; 3], g: &dyn Fn(&Point) -> f64) -> f64 {
    if let Some(prev) = previous {
        let q = last / prev;
        if q > 0.0 && q < 0.95 {
            return last * q / (1.0 - q);
        }
    }
    shell_rule().integrate(inner, g)
}
