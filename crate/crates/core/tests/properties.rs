use proptest::prelude::*;
use vobb_core::collision::{random_rotation, PoseSampler};
use vobb_core::nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use vobb_core::{
    brute_force_hit, build_direction_grid, build_pca_tree, estimate_obv, fit_tight, fixtures, lloyd_optimize, traverse_pair,
    tri_tri_intersect, unsound_prunes, BaselineConfig, Collider, CostModel, EventKind, FitMode, LloydConfig, Obb, ObbParams,
    ObbTree, ObvCache, ObvEvaluator, RigidTransform, TriangleMesh,
};

fn fixture(k: usize) -> TriangleMesh {
    match k % 4 {
        0 => fixtures::cube(1.0),
        1 => fixtures::dumbbell(),
        2 => fixtures::twin_cubes(),
        _ => fixtures::icosphere(1, 1.0),
    }
}

fn rotation(axis: [f64; 3], angle: f64) -> Rotation3<f64> {
    let a = Vector3::from(axis);
    if a.norm() < 1e-6 {
        return Rotation3::identity();
    }
    Rotation3::from_axis_angle(&vobb_core::nalgebra::Unit::new_normalize(a), angle)
}

fn moved(mesh: &TriangleMesh, x: &RigidTransform) -> TriangleMesh {
    TriangleMesh::new(mesh.vertices().iter().map(|p| x.apply(p)).collect(), mesh.faces().to_vec()).unwrap()
}

fn axis() -> impl Strategy<Value = [f64; 3]> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn outside_volume_is_bounded_and_rigid_invariant(
        k in 0usize..4,
        offset in [-0.8..0.8f64, -0.8..0.8f64, -0.8..0.8f64],
        half in [0.2..1.6f64, 0.2..1.6f64, 0.2..1.6f64],
        ax in axis(), angle in 0.0..3.0f64,
        mx in axis(), mangle in 0.0..3.0f64, shift in [-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64],
    ) {
        let mesh = fixture(k);
        let grid = build_direction_grid(8).unwrap();
        let center = mesh.bounds().center() + Vector3::from(offset);
        let obb = Obb::new(center, *rotation(ax, angle).matrix(), Vector3::from(half));
        let v = estimate_obv(&mesh, &obb, &grid).unwrap();
        prop_assert!(v >= 0.0 && v <= obb.volume() * (1.0 + 1e-12));

        let x = RigidTransform::new(*rotation(mx, mangle).matrix(), Vector3::from(shift)).unwrap();
        let moved_box = obb.transformed(&x.rotation, &x.translation);
        let w = estimate_obv(&moved(&mesh, &x), &moved_box, &grid).unwrap();
        prop_assert!((v - w).abs() <= 1e-3 * obb.volume(), "{v} vs {w}");
    }

    #[test]
    fn tight_fits_contain_and_recentering_never_grows(
        pts in prop::collection::vec([-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64], 1..40),
        ax in axis(), angle in 0.0..3.0f64, c in [-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64],
    ) {
        let pts: Vec<Point3<f64>> = pts.into_iter().map(Point3::from).collect();
        let params = ObbParams::new(Point3::from(c), &rotation(ax, angle));
        let centered = fit_tight(&pts, &params, FitMode::Centered, 1e-9).unwrap();
        let recentered = fit_tight(&pts, &params, FitMode::Recenter, 1e-9).unwrap();
        for b in [&centered, &recentered] {
            prop_assert!(pts.iter().all(|p| b.contains_point(p, 1e-9)));
        }
        prop_assert!(recentered.volume() <= centered.volume() * (1.0 + 1e-12));
    }

    #[test]
    fn triangle_test_is_symmetric_and_respects_contact(
        a in [axis(), axis(), axis()], b in [axis(), axis(), axis()], far in 3.0..10.0f64,
    ) {
        let ta = a.map(Point3::from);
        let tb = b.map(Point3::from);
        let area = |t: &[Point3<f64>; 3]| 0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm();
        prop_assume!(area(&ta) > 1e-6 && area(&tb) > 1e-6);
        prop_assert_eq!(tri_tri_intersect(&ta, &tb).unwrap(), tri_tri_intersect(&tb, &ta).unwrap());
        let shifted = tb.map(|p| p + Vector3::new(far, 0.0, 0.0));
        prop_assert!(!tri_tri_intersect(&ta, &shifted).unwrap());
        let sharing = [ta[0], tb[1], tb[2]];
        if area(&sharing) > 1e-6 {
            prop_assert!(tri_tri_intersect(&ta, &sharing).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn lloyd_partitions_are_total_and_monotone(k in 0usize..4, n in 1usize..5, seed in any::<u64>()) {
        let mesh = fixture(k);
        let grid = build_direction_grid(8).unwrap();
        let cache = ObvCache::new(1e-4 * mesh.diagonal(), 1e-4);
        let eval = ObvEvaluator::new(&mesh, &grid, &cache);
        let faces: Vec<usize> = (0..mesh.face_count()).collect();
        let config = LloydConfig { n_clusters: n, max_iters: 8, ..LloydConfig::default() }.with_seed(seed);
        let r = lloyd_optimize(&eval, &faces, &config).unwrap();
        r.partition.check(&faces).unwrap();
        prop_assert_eq!(r.partition.clusters.len(), n);
        for (c, members) in r.clusters.iter().zip(&r.partition.clusters) {
            prop_assert!(!members.is_empty());
            prop_assert!(mesh.face_vertices(members).iter().all(|p| c.obb.contains_point(p, 1e-9 * mesh.diagonal())));
        }
        let accepted: Vec<f64> = r.trace.iter().filter(|e| e.accepted && e.kind == EventKind::Iteration).map(|e| e.total).collect();
        prop_assert!(accepted.windows(2).all(|w| w[1] <= w[0]), "{:?}", accepted);
        prop_assert!(r.error <= r.trace[0].total);
    }

    #[test]
    fn baseline_trees_are_valid_and_round_trip(k in 0usize..4, depth in 0usize..6, min_faces in 1usize..6) {
        let mesh = fixture(k);
        let tree = build_pca_tree(&mesh, &BaselineConfig { depth, min_faces_per_leaf: min_faces }).unwrap();
        tree.check(&mesh).unwrap();
        let back = ObbTree::from_json(&tree.to_json(Some("digest")).unwrap()).unwrap();
        prop_assert_eq!(back, tree);
    }

    #[test]
    fn traversal_is_sound_and_cost_is_linear(seed in any::<u64>(), depth in 1usize..4, scale in 0u32..4) {
        let a = fixtures::dumbbell();
        let b = fixtures::icosphere(1, 0.7);
        let config = |depth| BaselineConfig { depth, min_faces_per_leaf: 1 };
        let (ta, tb) = (build_pca_tree(&a, &config(depth)).unwrap(), build_pca_tree(&b, &config(depth)).unwrap());
        let (ca, cb) = (Collider::new(&ta, &a).unwrap(), Collider::new(&tb, &b).unwrap());
        let k = 2f64.powi(scale as i32);
        let base = CostModel::default();
        let scaled = CostModel { c_v: k * base.c_v, c_p: k * base.c_p };
        for x in PoseSampler::default().sample(&a, &b, 6, seed) {
            let s = traverse_pair(ca, cb, &x, &base, false).unwrap();
            prop_assert_eq!(s.hit, brute_force_hit(&a, &b, &x).unwrap());
            prop_assert!(!s.hit || s.n_p >= 1);
            prop_assert!(unsound_prunes(ca, cb, &x).unwrap().is_empty());
            let t = traverse_pair(ca, cb, &x, &scaled, false).unwrap();
            prop_assert_eq!((t.n_v, t.n_p), (s.n_v, s.n_p));
            prop_assert_eq!(t.cost, k * s.cost);
        }
    }

    #[test]
    fn sampled_rotations_are_proper(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let r: Matrix3<f64> = random_rotation(&mut rng);
        prop_assert!(RigidTransform::new(r, Vector3::zeros()).is_ok());
    }
}
