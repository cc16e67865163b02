use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stokes_afem::{DomainSpec, Mesh, Point};

const ROUNDS: usize = 20;

fn perimeter(domain: &DomainSpec) -> f64 {
    let b = domain.boundary();
    (0..b.len()).map(|i| (b[(i + 1) % b.len()] - b[i]).norm()).sum()
}

fn min_angle(mesh: &Mesh) -> f64 {
    (0..mesh.num_elements()).map(|t| mesh.min_angle(t)).fold(f64::INFINITY, f64::min)
}

/// Conformity: an edge with a single element must lie on the boundary, so a
/// hanging node would show up as a lone edge in the interior.
fn check_conforming(mesh: &Mesh, domain: &DomainSpec) {
    let mut boundary_length = 0.0;
    for e in 0..mesh.num_edges() {
        let (_, other) = mesh.edge_elements(e);
        let on_boundary = domain.distance_to_boundary(&mesh.midpoint(e)) < 1e-14;
        assert_eq!(other.is_none(), on_boundary, "edge {e}");
        if other.is_none() {
            boundary_length += mesh.edge_length(e);
        }
    }
    assert!((boundary_length - perimeter(domain)).abs() < 1e-12);
    for v in 0..mesh.num_vertices() {
        let d = domain.distance_to_boundary(&mesh.vertices()[v]);
        assert_eq!(mesh.is_boundary_vertex(v), d < 1e-14, "vertex {v}");
    }
    for t in 0..mesh.num_elements() {
        assert!(mesh.area(t) > 0.0);
    }
}

fn check_nested(coarse: &Mesh, fine: &Mesh) {
    let parents = fine.parents().expect("refined mesh records parents");
    assert_eq!(parents.len(), fine.num_elements());
    let mut child_area = vec![0.0; coarse.num_elements()];
    for (t, &p) in parents.iter().enumerate() {
        assert!(coarse.contains(p, &fine.centroid(t)));
        child_area[p] += fine.area(t);
    }
    for (p, a) in child_area.iter().enumerate() {
        assert!((a - coarse.area(p)).abs() <= 1e-14 * coarse.area(p).max(1.0), "parent {p}");
    }
}

fn refine_randomly(start: Mesh, domain: &DomainSpec, seed: u64, per_round: usize) -> Vec<Mesh> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut meshes = vec![start];
    for _ in 0..ROUNDS {
        let mesh = meshes.last().unwrap();
        let marked: Vec<usize> = (0..per_round).map(|_| rng.random_range(0..mesh.num_elements())).collect();
        let next = mesh.bisect(&marked).unwrap();
        assert!(next.num_elements() >= mesh.num_elements() + 1);
        check_conforming(&next, domain);
        check_nested(mesh, &next);
        assert!((next.total_area() - domain.area()).abs() < 1e-12);
        meshes.push(next);
    }
    meshes
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_refinement_keeps_invariants(seed in any::<u64>(), l_shape in any::<bool>(), per_round in 1usize..12) {
        let domain = if l_shape { DomainSpec::l_shape(1).unwrap() } else { DomainSpec::unit_square(2).unwrap() };
        let start = Mesh::initial(&domain);
        let floor = min_angle(&start) / 2.0;
        for mesh in refine_randomly(start, &domain, seed, per_round) {
            prop_assert!(min_angle(&mesh) >= floor - 1e-12);
        }
    }

    #[test]
    fn perturbed_mesh_keeps_half_its_smallest_angle(seed in any::<u64>()) {
        let domain = DomainSpec::unit_square(4).unwrap();
        let base = Mesh::initial(&domain);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vertices: Vec<Point> = base
            .vertices()
            .iter()
            .enumerate()
            .map(|(v, p)| {
                if base.is_boundary_vertex(v) {
                    *p
                } else {
                    p + nalgebra::Vector2::new(rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06))
                }
            })
            .collect();
        let start = Mesh::from_triangles(vertices, base.elements().to_vec()).unwrap();
        let floor = min_angle(&start) / 2.0;
        for mesh in refine_randomly(start, &domain, seed ^ 0x5eed, 8) {
            prop_assert!(min_angle(&mesh) >= floor - 1e-12);
        }
    }
}

#[test]
fn refinement_toward_a_point_localizes() {
    let domain = DomainSpec::unit_square(2).unwrap();
    let mut mesh = Mesh::initial(&domain);
    let z = Point::new(0.5, 0.5);
    let h0 = (0..mesh.num_elements()).map(|t| mesh.diameter(t)).fold(0.0, f64::max);
    for _ in 0..ROUNDS {
        let marked = mesh.elements_containing(&z);
        let next = mesh.bisect(&marked).unwrap();
        check_conforming(&next, &domain);
        check_nested(&mesh, &next);
        mesh = next;
    }
    let at_z = mesh.elements_containing(&z).iter().map(|&t| mesh.diameter(t)).fold(0.0, f64::max);
    assert!(at_z <= h0 / 2f64.powi(9));
    // Refinement stays local: far away elements keep the initial size.
    let far = mesh.locate(&Point::new(0.05, 0.05)).unwrap();
    assert!(mesh.diameter(far) > h0 / 4.0);
}

#[test]
fn dump_survives_refinement() {
    let domain = DomainSpec::l_shape(1).unwrap();
    let mesh = refine_randomly(Mesh::initial(&domain), &domain, 7, 5).pop().unwrap();
    let back = Mesh::parse_dump(&mesh.dump()).unwrap();
    assert_eq!(back.num_elements(), mesh.num_elements());
    assert_eq!(back.vertices(), mesh.vertices());
}
