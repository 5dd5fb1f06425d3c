use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rotsync::io::{self, GraphFormat};
use rotsync::so3::{geodesic_distance, random_rotation, Rotation};
use rotsync::synth::{generate, generate_instance, SyntheticSpec};
use rotsync::{Error, ViewGraph};

fn matrix(r: &Rotation) -> Matrix3<f64> {
    let m = r.to_matrix();
    Matrix3::from_fn(|i, j| m[i][j])
}

#[test]
fn compose_path_matches_matrix_fold() {
    let spec = SyntheticSpec {
        n: 40,
        edge_density: 0.2,
        outlier_fraction: 0.3,
        seed: 21,
        ..Default::default()
    };
    let (g, _) = generate(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        // random walk along existing edges
        let mut path = vec![rng.random_range(0..g.node_count())];
        for _ in 0..rng.random_range(1..12) {
            let here = *path.last().unwrap();
            let nbrs = g.neighbors(here);
            path.push(nbrs[rng.random_range(0..nbrs.len())].0);
        }
        let got = g.compose_path(&path).unwrap();
        let oracle = path.windows(2).fold(Matrix3::identity(), |acc, w| {
            acc * matrix(&g.oriented_measurement(w[0], w[1]).unwrap())
        });
        assert!((matrix(&got) - oracle).abs().max() < 1e-10);
    }
}

#[test]
fn broken_path_is_an_error() {
    let mut g = ViewGraph::new(4);
    g.add_edge(0, 1, Rotation::rz(0.1), 1.0).unwrap();
    g.add_edge(2, 3, Rotation::rz(0.1), 1.0).unwrap();
    assert!(matches!(g.compose_path(&[0, 1, 2]), Err(Error::BrokenPath(1, 2))));
}

#[test]
fn acyclic_edges_hang_off_the_cyclic_core() {
    // a 4-cycle with a pendant path and a pendant star
    let mut g = ViewGraph::new(9);
    for (i, j) in [(0, 1), (1, 2), (2, 3), (3, 0), (2, 4), (4, 5), (5, 6), (0, 7), (0, 8)] {
        g.add_edge(i, j, Rotation::rx(0.1), 1.0).unwrap();
    }
    let cycles = g.cycle_basis(usize::MAX).unwrap();
    let cyclic = cycles.cyclic_edges();
    let in_core: Vec<bool> = (0..g.node_count())
        .map(|v| g.neighbors(v).iter().any(|&(_, e)| cyclic[e]))
        .collect();
    assert_eq!(in_core.iter().filter(|c| **c).count(), 4);
    // every non-core node reaches the core through acyclic edges only, and the
    // acyclic subgraph is a forest
    let acyclic: Vec<usize> = (0..g.edge_count()).filter(|&e| !cyclic[e]).collect();
    let mut parent: Vec<usize> = (0..g.node_count()).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for &e in &acyclic {
        let edge = g.edge(e);
        let (a, b) = (find(&mut parent, edge.i), find(&mut parent, edge.j));
        assert_ne!(a, b, "acyclic edges contain a cycle");
        parent[a] = b;
    }
    for v in 0..g.node_count() {
        if !in_core[v] {
            let root = find(&mut parent, v);
            assert!((0..g.node_count()).any(|u| in_core[u] && find(&mut parent, u) == root));
        }
    }
}

#[test]
fn gauge_change_leaves_every_measurement_bit_identical() {
    let spec = SyntheticSpec {
        n: 60,
        outlier_fraction: 0.3,
        inlier_sigma: 0.01,
        seed: 4,
        ..Default::default()
    };
    let plain = generate_instance(&spec, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..3 {
        let g = random_rotation(&mut rng);
        let moved = generate_instance(&spec, Some(g)).unwrap();
        assert_eq!(moved.graph, plain.graph);
        for (a, b) in moved.graph.edges().iter().zip(plain.graph.edges()) {
            assert_eq!(a.measurement.to_wxyz().map(f64::to_bits), b.measurement.to_wxyz().map(f64::to_bits));
        }
        for c in &plain.graph.cycle_basis(usize::MAX).unwrap().cycles {
            assert_eq!(
                moved.graph.cycle_residual(c, false).to_bits(),
                plain.graph.cycle_residual(c, false).to_bits()
            );
        }
        for (t, m) in plain.truth.iter().zip(&moved.truth) {
            assert!(geodesic_distance(&(g * *t), m) < 1e-15);
        }
    }
}

fn weighted_graph(seed: u64) -> ViewGraph {
    let spec = SyntheticSpec {
        n: 30,
        outlier_fraction: 0.2,
        seed,
        ..Default::default()
    };
    let (g, _) = generate(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..g.edge_count()).map(|_| rng.random_range(0.05..=1.0)).collect();
    g.with_weights(&w).unwrap()
}

#[test]
fn files_roundtrip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let g = weighted_graph(3);
    let truth: Vec<Rotation> = {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (0..g.node_count()).map(|_| random_rotation(&mut rng)).collect()
    };

    let json = dir.path().join("graph.json");
    io::write_graph(&json, &g, None).unwrap();
    let first = std::fs::read(&json).unwrap();
    let doc = io::read_graph(&json).unwrap();
    assert_eq!(doc.graph, g);
    io::write_graph(&json, &doc.graph, None).unwrap();
    assert_eq!(std::fs::read(&json).unwrap(), first);

    let g2o = dir.path().join("graph.g2o");
    io::write_graph(&g2o, &g, Some(&truth)).unwrap();
    let first = std::fs::read(&g2o).unwrap();
    let doc = io::read_graph(&g2o).unwrap();
    assert_eq!(doc.graph.labels(), g.labels());
    assert_eq!(doc.vertices.as_deref(), Some(&truth[..]));
    io::write_graph(&g2o, &doc.graph, doc.vertices.as_deref()).unwrap();
    assert_eq!(std::fs::read(&g2o).unwrap(), first);
}

#[test]
fn format_detection() {
    let p = std::path::Path::new("x.txt");
    assert_eq!(GraphFormat::detect(p, "  {\"nodes\": []}"), GraphFormat::Json);
    assert_eq!(GraphFormat::detect(p, "# c\nEDGE_SO3:QUAT 0 1 0 0 0 1\n"), GraphFormat::G2o);
    assert_eq!(GraphFormat::detect(std::path::Path::new("a.g2o"), ""), GraphFormat::G2o);
}

#[test]
fn info_fields_are_accepted() {
    let text = "VERTEX_SO3:QUAT 0 0 0 0 1\nVERTEX_SO3:QUAT 1 0 0 0 1\n\
                EDGE_SO3:QUAT 0 1 0 0 0.7071067811865476 0.7071067811865476 1 0 0 1 0 1\n";
    let doc = io::parse_g2o(text, &io::memory_path()).unwrap();
    assert_eq!(doc.graph.edge_count(), 1);
    let m = doc.graph.oriented_measurement(0, 1).unwrap();
    assert!(geodesic_distance(&m, &Rotation::rz(std::f64::consts::FRAC_PI_2)) < 1e-12);
}

#[test]
fn json_errors_name_the_file() {
    let err = io::parse_json("{\"nodes\": [0, 1], \"edges\": [{\"i\": 0, \"j\": 5, \"q\": [1,0,0,0]}]}", std::path::Path::new("bad.json"))
        .unwrap_err();
    assert!(err.to_string().contains("bad.json"), "{err}");
}
