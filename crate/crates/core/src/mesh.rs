//! Conforming triangle meshes, geometric queries and longest-edge bisection.
//!
//! A [`Mesh`] is immutable. Refinement through [`Mesh::bisect`] produces a
//! new mesh together with the genealogy that maps every new element to the
//! element of the previous mesh that contains it.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::num::NonZeroUsize;

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{input_error, AfemError, Result};
use crate::quadrature::WeightSpec;

pub type Point = Point2<f64>;
pub type Vector = Vector2<f64>;

/// Barycentric coordinates below `-CONTAINMENT_TOL` place a point outside a
/// closed triangle.
pub const CONTAINMENT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    /// `(0,1)^2`
    UnitSquare,
    /// `(-1,1)^2 \ [0,1) x [-1,0)`
    LShape,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DomainSpec {
    pub kind: DomainKind,
    /// Grid cells per unit length.
    pub subdivisions: NonZeroUsize,
}

impl DomainSpec {
    pub fn new(kind: DomainKind, subdivisions: usize) -> Result<Self> {
        let subdivisions = NonZeroUsize::new(subdivisions)
            .ok_or_else(|| AfemError::Input("subdivisions must be at least 1".into()))?;
        Ok(Self { kind, subdivisions })
    }

    pub fn unit_square(subdivisions: usize) -> Result<Self> {
        Self::new(DomainKind::UnitSquare, subdivisions)
    }

    pub fn l_shape(subdivisions: usize) -> Result<Self> {
        Self::new(DomainKind::LShape, subdivisions)
    }

    pub fn area(&self) -> f64 {
        match self.kind {
            DomainKind::UnitSquare => 1.0,
            DomainKind::LShape => 3.0,
        }
    }

    /// Boundary polygon, counterclockwise.
    pub fn boundary(&self) -> Vec<Point> {
        match self.kind {
            DomainKind::UnitSquare => vec![
                Point::new(0.0, 0.0),
                Point::new(1.0, 0.0),
                Point::new(1.0, 1.0),
                Point::new(0.0, 1.0),
            ],
            DomainKind::LShape => vec![
                Point::new(-1.0, -1.0),
                Point::new(0.0, -1.0),
                Point::new(0.0, 0.0),
                Point::new(1.0, 0.0),
                Point::new(1.0, 1.0),
                Point::new(-1.0, 1.0),
            ],
        }
    }

    /// Whether `x` lies in the open domain.
    pub fn contains_interior(&self, x: &Point) -> bool {
        let in_box = |lo: f64, hi: f64| x.x > lo && x.x < hi && x.y > lo && x.y < hi;
        match self.kind {
            DomainKind::UnitSquare => in_box(0.0, 1.0),
            DomainKind::LShape => in_box(-1.0, 1.0) && !(x.x >= 0.0 && x.y <= 0.0),
        }
    }

    /// Euclidean distance from `x` to the boundary polygon.
    pub fn distance_to_boundary(&self, x: &Point) -> f64 {
        let poly = self.boundary();
        (0..poly.len())
            .map(|i| segment_distance(x, &poly[i], &poly[(i + 1) % poly.len()]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn diameter(&self) -> f64 {
        match self.kind {
            DomainKind::UnitSquare => 2f64.sqrt(),
            DomainKind::LShape => 8f64.sqrt(),
        }
    }
}

pub(crate) fn segment_distance(x: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let t = ((x - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (x - (a + ab * t)).norm()
}

/// Geometric data of one element relative to a weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementGeometry {
    /// Longest edge length.
    pub h: f64,
    pub area: f64,
    /// Largest distance from the element to the (nearest) source.
    pub d: f64,
}

/// Conforming triangulation of a polygonal domain.
///
/// Local edge `k` of an element is the edge opposite its local vertex `k`.
/// Edges are numbered in lexicographic order of their sorted vertex pairs.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Point>,
    elements: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    edge_elements: Vec<(usize, Option<usize>)>,
    element_edges: Vec<[usize; 3]>,
    boundary_vertex: Vec<bool>,
    longest_edge: Vec<usize>,
    parents: Option<Vec<usize>>,
}

impl Mesh {
    /// Builds a mesh from raw vertices and triangles. Clockwise triangles are
    /// reoriented; degenerate triangles and edges shared by more than two
    /// triangles are rejected.
    pub fn from_triangles(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut elements = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.into_iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return input_error(format!("element {t} references a missing vertex"));
            }
            let [a, b, c] = tri;
            let area2 = cross(&(vertices[b] - vertices[a]), &(vertices[c] - vertices[a]));
            if area2 > 0.0 {
                elements.push([a, b, c]);
            } else if area2 < 0.0 {
                elements.push([a, c, b]);
            } else {
                return input_error(format!("element {t} is degenerate"));
            }
        }

        let mut local: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(3 * elements.len());
        for (t, tri) in elements.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                local.push((a.min(b), a.max(b), t, k));
            }
        }
        local.sort_unstable();

        let mut edges = Vec::new();
        let mut edge_elements: Vec<(usize, Option<usize>)> = Vec::new();
        let mut element_edges = vec![[usize::MAX; 3]; elements.len()];
        for (a, b, t, k) in local {
            if edges.last() == Some(&[a, b]) {
                let e = edges.len() - 1;
                if edge_elements[e].1.is_some() {
                    return input_error(format!("edge ({a}, {b}) is shared by more than two elements"));
                }
                edge_elements[e].1 = Some(t);
                element_edges[t][k] = e;
            } else {
                edges.push([a, b]);
                edge_elements.push((t, None));
                element_edges[t][k] = edges.len() - 1;
            }
        }

        let mut boundary_vertex = vec![false; vertices.len()];
        for (e, inc) in edge_elements.iter().enumerate() {
            if inc.1.is_none() {
                boundary_vertex[edges[e][0]] = true;
                boundary_vertex[edges[e][1]] = true;
            }
        }

        let mut mesh = Self {
            vertices,
            elements,
            edges,
            edge_elements,
            element_edges,
            boundary_vertex,
            longest_edge: Vec::new(),
            parents: None,
        };
        mesh.longest_edge = (0..mesh.elements.len())
            .map(|t| {
                let ee = mesh.element_edges[t];
                (0..3)
                    .max_by(|&i, &j| {
                        let (li, lj) = (mesh.edge_length_squared(ee[i]), mesh.edge_length_squared(ee[j]));
                        // Ties go to the lower edge id.
                        li.total_cmp(&lj).then(ee[j].cmp(&ee[i]))
                    })
                    .unwrap()
            })
            .collect();
        Ok(mesh)
    }

    /// Uniform initial mesh: every grid cell split along its positive-slope diagonal.
    pub fn initial(domain: &DomainSpec) -> Self {
        let n = domain.subdivisions.get() as i64;
        let (lo, cells): (i64, Box<dyn Fn(i64, i64) -> bool>) = match domain.kind {
            DomainKind::UnitSquare => (0, Box::new(move |i, j| i < n && j < n)),
            // cells in [-1,1)^2 except the quadrant x >= 0, y < 0
            DomainKind::LShape => (-n, Box::new(move |i, j| i < n && j < n && !(i >= 0 && j < 0))),
        };
        let h = 1.0 / n as f64;
        let mut index: HashMap<(i64, i64), usize> = HashMap::new();
        let mut vertices = Vec::new();
        let mut vertex = |i: i64, j: i64, vertices: &mut Vec<Point>| {
            *index.entry((i, j)).or_insert_with(|| {
                vertices.push(Point::new(i as f64 * h, j as f64 * h));
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::new();
        for j in lo..n {
            for i in lo..n {
                if !cells(i, j) {
                    continue;
                }
                let v00 = vertex(i, j, &mut vertices);
                let v10 = vertex(i + 1, j, &mut vertices);
                let v11 = vertex(i + 1, j + 1, &mut vertices);
                let v01 = vertex(i, j + 1, &mut vertices);
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Self::from_triangles(vertices, triangles).expect("structured grid is a valid mesh")
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Global edge ids of an element; entry `k` is opposite local vertex `k`.
    pub fn element_edges(&self, t: usize) -> [usize; 3] {
        self.element_edges[t]
    }

    /// Incident elements of an edge: the first, and the second for interior edges.
    pub fn edge_elements(&self, e: usize) -> (usize, Option<usize>) {
        self.edge_elements[e]
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.edge_elements[e].1.is_none()
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    /// Local index of the refinement edge.
    pub fn longest_edge(&self, t: usize) -> usize {
        self.longest_edge[t]
    }

    /// For a refined mesh, the id of the containing element in the previous mesh.
    pub fn parents(&self) -> Option<&[usize]> {
        self.parents.as_deref()
    }

    pub fn element_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.elements[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.element_points(t);
        0.5 * cross(&(b - a), &(c - a))
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        self.edge_length_squared(e).sqrt()
    }

    fn edge_length_squared(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e];
        (self.vertices[b] - self.vertices[a]).norm_squared()
    }

    /// Element diameter, i.e. the longest edge length.
    pub fn diameter(&self, t: usize) -> f64 {
        self.edge_length(self.element_edges[t][self.longest_edge[t]])
    }

    pub fn midpoint(&self, e: usize) -> Point {
        let [a, b] = self.edges[e];
        nalgebra::center(&self.vertices[a], &self.vertices[b])
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.element_points(t);
        Point::from((a.coords + b.coords + c.coords) / 3.0)
    }

    /// Smallest interior angle of an element, in radians.
    pub fn min_angle(&self, t: usize) -> f64 {
        let p = self.element_points(t);
        (0..3)
            .map(|k| {
                let u = p[(k + 1) % 3] - p[k];
                let v = p[(k + 2) % 3] - p[k];
                cross(&u, &v).abs().atan2(u.dot(&v))
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Outward unit normal of element `t` on its local edge `k`.
    pub fn outward_normal(&self, t: usize, k: usize) -> Vector {
        let p = self.element_points(t);
        let d = p[(k + 2) % 3] - p[(k + 1) % 3];
        // counterclockwise orientation: the outward normal is the tangent rotated clockwise
        Vector::new(d.y, -d.x).normalize()
    }

    /// Gradients of the barycentric coordinates (constant on the element).
    pub fn barycentric_gradients(&self, t: usize) -> [Vector; 3] {
        let p = self.element_points(t);
        let twice_area = cross(&(p[1] - p[0]), &(p[2] - p[0]));
        std::array::from_fn(|k| {
            let d = p[(k + 2) % 3] - p[(k + 1) % 3];
            Vector::new(-d.y, d.x) / twice_area
        })
    }

    pub fn barycentric(&self, t: usize, x: &Point) -> [f64; 3] {
        barycentric(&self.element_points(t), x)
    }

    /// Whether `x` lies in the closed element `t`.
    pub fn contains(&self, t: usize, x: &Point) -> bool {
        self.barycentric(t, x).iter().all(|&l| l >= -CONTAINMENT_TOL)
    }

    /// Lowest-id element whose closure contains `x`.
    pub fn locate(&self, x: &Point) -> Result<usize> {
        (0..self.num_elements())
            .find(|&t| self.contains(t, x))
            .ok_or(AfemError::Lookup { x: x.x, y: x.y })
    }

    /// All elements whose closure contains `x`, ascending.
    pub fn elements_containing(&self, x: &Point) -> Vec<usize> {
        (0..self.num_elements()).filter(|&t| self.contains(t, x)).collect()
    }

    pub fn element_geometry(&self, t: usize, weight: &WeightSpec) -> ElementGeometry {
        ElementGeometry {
            h: self.diameter(t),
            area: self.area(t),
            d: weight.distance_scale(&self.element_points(t)),
        }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_elements()).map(|t| self.area(t)).sum()
    }

    /// Refines by longest-edge bisection.
    ///
    /// Each marked element is bisected once across its longest edge. When the
    /// neighbor across that edge has a different longest edge, the neighbor is
    /// refined first (longest-edge propagation path), so the mesh stays
    /// conforming after every single bisection.
    pub fn bisect(&self, marked: &[usize]) -> Result<Mesh> {
        if let Some(&bad) = marked.iter().find(|&&t| t >= self.num_elements()) {
            return input_error(format!("marked element {bad} does not exist"));
        }
        if marked.is_empty() {
            return Ok(self.clone());
        }
        let mut work = Refinement::new(self);
        let mut order = marked.to_vec();
        order.sort_unstable();
        order.dedup();
        for t in order {
            while work.alive[t] {
                work.refine_path(t);
            }
        }
        work.finish()
    }

    /// Plain-text dump: `mesh 2d`, the vertex block and the element block.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        writeln!(out, "mesh 2d").unwrap();
        writeln!(out, "vertices {}", self.vertices.len()).unwrap();
        for v in &self.vertices {
            writeln!(out, "{} {}", v.x, v.y).unwrap();
        }
        writeln!(out, "elements {}", self.elements.len()).unwrap();
        for [i, j, k] in &self.elements {
            writeln!(out, "{i} {j} {k}").unwrap();
        }
        out
    }

    /// Parses the format written by [`Mesh::dump`].
    pub fn parse_dump(text: &str) -> Result<Mesh> {
        let bad = |msg: &str| AfemError::Input(format!("mesh dump: {msg}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("mesh 2d") {
            return Err(bad("missing `mesh 2d` header"));
        }
        let count = |key: &str, line: Option<&str>| -> Result<usize> {
            line.and_then(|l| l.strip_prefix(key))
                .and_then(|n| n.trim().parse().ok())
                .ok_or_else(|| bad(&format!("expected `{key} N`")))
        };
        let nv = count("vertices", lines.next())?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let xy: Vec<f64> = lines
                .next()
                .ok_or_else(|| bad("truncated vertex block"))?
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("invalid coordinate"))?;
            if xy.len() != 2 {
                return Err(bad("vertex lines need two coordinates"));
            }
            vertices.push(Point::new(xy[0], xy[1]));
        }
        let ne = count("elements", lines.next())?;
        let mut triangles = Vec::with_capacity(ne);
        for _ in 0..ne {
            let ijk: Vec<usize> = lines
                .next()
                .ok_or_else(|| bad("truncated element block"))?
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("invalid vertex index"))?;
            if ijk.len() != 3 {
                return Err(bad("element lines need three indices"));
            }
            triangles.push([ijk[0], ijk[1], ijk[2]]);
        }
        Mesh::from_triangles(vertices, triangles)
    }
}

pub(crate) fn cross(u: &Vector, v: &Vector) -> f64 {
    u.x * v.y - u.y * v.x
}

pub(crate) fn barycentric(p: &[Point; 3], x: &Point) -> [f64; 3] {
    let twice_area = cross(&(p[1] - p[0]), &(p[2] - p[0]));
    let l1 = cross(&(p[2] - p[1]), &(x - p[1])) / twice_area;
    let l2 = cross(&(p[0] - p[2]), &(x - p[2])) / twice_area;
    [l1, l2, 1.0 - l1 - l2]
}

/// Mutable state of one refinement pass.
struct Refinement {
    vertices: Vec<Point>,
    tris: Vec<[usize; 3]>,
    alive: Vec<bool>,
    origin: Vec<usize>,
    edge_tris: HashMap<(usize, usize), [usize; 2]>,
}

const NONE: usize = usize::MAX;

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl Refinement {
    fn new(mesh: &Mesh) -> Self {
        let mut edge_tris = HashMap::with_capacity(mesh.num_edges());
        for (e, &[a, b]) in mesh.edges.iter().enumerate() {
            let (t0, t1) = mesh.edge_elements[e];
            edge_tris.insert((a, b), [t0, t1.unwrap_or(NONE)]);
        }
        Self {
            vertices: mesh.vertices.clone(),
            tris: mesh.elements.clone(),
            alive: vec![true; mesh.num_elements()],
            origin: (0..mesh.num_elements()).collect(),
            edge_tris,
        }
    }

    fn length_squared(&self, (a, b): (usize, usize)) -> f64 {
        (self.vertices[b] - self.vertices[a]).norm_squared()
    }

    /// Longest local edge, ties to the lexicographically smallest vertex pair.
    fn longest(&self, t: usize) -> usize {
        let tri = self.tris[t];
        let edge = |k: usize| key(tri[(k + 1) % 3], tri[(k + 2) % 3]);
        (0..3)
            .max_by(|&i, &j| {
                self.length_squared(edge(i))
                    .total_cmp(&self.length_squared(edge(j)))
                    .then(edge(j).cmp(&edge(i)))
            })
            .unwrap()
    }

    fn neighbor(&self, t: usize, k: usize) -> Option<usize> {
        let tri = self.tris[t];
        let pair = self.edge_tris[&key(tri[(k + 1) % 3], tri[(k + 2) % 3])];
        let other = if pair[0] == t { pair[1] } else { pair[0] };
        (other != NONE).then_some(other)
    }

    /// Follows the longest-edge propagation path from `t` and bisects the
    /// terminal edge (one or two triangles).
    fn refine_path(&mut self, t: usize) {
        let mut cur = t;
        loop {
            let k = self.longest(cur);
            match self.neighbor(cur, k) {
                None => {
                    let tri = self.tris[cur];
                    self.split_edge(tri[(k + 1) % 3], tri[(k + 2) % 3]);
                    return;
                }
                Some(n) => {
                    let tri = self.tris[cur];
                    let e = key(tri[(k + 1) % 3], tri[(k + 2) % 3]);
                    let ntri = self.tris[n];
                    let kn = self.longest(n);
                    if key(ntri[(kn + 1) % 3], ntri[(kn + 2) % 3]) == e {
                        self.split_edge(e.0, e.1);
                        return;
                    }
                    cur = n;
                }
            }
        }
    }

    fn split_edge(&mut self, a: usize, b: usize) {
        let m = self.vertices.len();
        self.vertices.push(nalgebra::center(&self.vertices[a], &self.vertices[b]));
        let pair = self.edge_tris.remove(&key(a, b)).expect("edge exists");
        self.edge_tris.insert(key(a, m), [NONE, NONE]);
        self.edge_tris.insert(key(m, b), [NONE, NONE]);
        for t in pair.into_iter().filter(|&t| t != NONE) {
            self.split_triangle(t, a, b, m);
        }
    }

    fn split_triangle(&mut self, t: usize, a: usize, b: usize, m: usize) {
        let tri = self.tris[t];
        let k = (0..3)
            .find(|&k| key(tri[(k + 1) % 3], tri[(k + 2) % 3]) == key(a, b))
            .expect("edge belongs to triangle");
        let (apex, p, q) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
        self.alive[t] = false;
        let children = [[apex, p, m], [apex, m, q]];
        for child in children {
            let c = self.tris.len();
            self.tris.push(child);
            self.alive.push(true);
            self.origin.push(self.origin[t]);
            for j in 0..3 {
                let e = key(child[(j + 1) % 3], child[(j + 2) % 3]);
                let slot = self.edge_tris.entry(e).or_insert([NONE, NONE]);
                if let Some(s) = slot.iter_mut().find(|s| **s == t) {
                    *s = c;
                } else if slot[0] == NONE {
                    slot[0] = c;
                } else {
                    debug_assert_eq!(slot[1], NONE);
                    slot[1] = c;
                }
            }
        }
    }

    fn finish(self) -> Result<Mesh> {
        let (tris, parents): (Vec<_>, Vec<_>) = (0..self.tris.len())
            .filter(|&t| self.alive[t])
            .map(|t| (self.tris[t], self.origin[t]))
            .unzip();
        let mut mesh = Mesh::from_triangles(self.vertices, tris)?;
        mesh.parents = Some(parents);
        Ok(mesh)
    }
}
