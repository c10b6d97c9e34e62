use kpchange::cloud::ply::{read_ply, write_ply, PlyFormat};
use kpchange::cloud::{extract_cylinder_pair, grid_subsample, grid_subsample_with_origin, in_cylinder, SpatialIndex};
use kpchange::{EpochTag, Point3, PointCloud};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn brute_knn(points: &[Point3], q: &Point3, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (dist(p, q), i)).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

fn random_points(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.random_range(0.0..50.0), rng.random_range(0.0..50.0), rng.random_range(0.0..10.0)]).collect()
}

#[test]
fn queries_equal_brute_force_on_1000_points() {
    let pts = random_points(1000, 1);
    let index = SpatialIndex::build(&pts).unwrap();
    let queries = random_points(50, 2);
    for q in &queries {
        let got: Vec<usize> = index.knn(q, 16).unwrap().iter().map(|n| n.index).collect();
        assert_eq!(got, brute_knn(&pts, q, 16));
        let r = 4.0;
        let mut sphere = index.radius_sphere(q, r).unwrap();
        sphere.sort_unstable();
        let expect: Vec<usize> = (0..pts.len()).filter(|&i| dist(&pts[i], q) <= r).collect();
        assert_eq!(sphere, expect);
        let mut cyl = index.radius_cylinder(q, r).unwrap();
        cyl.sort_unstable();
        let expect: Vec<usize> = (0..pts.len()).filter(|&i| in_cylinder(&pts[i], [q[0], q[1]], r)).collect();
        assert_eq!(cyl, expect);
    }
}

fn cloud_strategy() -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, -5.0..5.0f64).prop_map(|(x, y, z)| [x, y, z]), 1..200)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_matches_oracle_and_is_sorted(pts in cloud_strategy(), q in (-25.0..25.0f64, -25.0..25.0f64, -6.0..6.0f64), k in 1usize..20) {
        let index = SpatialIndex::build(&pts).unwrap();
        let q = [q.0, q.1, q.2];
        let k = k.min(pts.len());
        let got = index.knn(&q, k).unwrap();
        prop_assert_eq!(got.iter().map(|n| n.index).collect::<Vec<_>>(), brute_knn(&pts, &q, k));
        prop_assert!(got.windows(2).all(|w| w[0].dist <= w[1].dist));
    }

    #[test]
    fn sphere_is_subset_of_cylinder(pts in cloud_strategy(), r in 0.1..15.0f64, qi in 0usize..200) {
        let index = SpatialIndex::build(&pts).unwrap();
        let q = pts[qi % pts.len()];
        let sphere = index.radius_sphere(&q, r).unwrap();
        let cyl = index.radius_cylinder(&q, r).unwrap();
        prop_assert!(sphere.iter().all(|i| cyl.contains(i)));
        prop_assert_eq!(index.count_sphere(&q, r).unwrap(), sphere.len());
    }

    #[test]
    fn subsampling_shrinks_and_is_stable(pts in cloud_strategy(), dl in 0.3..5.0f64) {
        let cloud = PointCloud::new(pts, EpochTag::Pc1);
        let origin = [-30.0, -30.0, -30.0];
        let once = grid_subsample_with_origin(&cloud, dl, origin).unwrap();
        prop_assert!(once.len() <= cloud.len());
        let twice = grid_subsample_with_origin(&once, dl, origin).unwrap();
        prop_assert_eq!(twice.len(), once.len());
        prop_assert!(grid_subsample(&cloud, dl).unwrap().len() <= cloud.len());
    }

    #[test]
    fn binary_ply_round_trip_is_exact(pts in cloud_strategy()) {
        let n = pts.len();
        let cloud = PointCloud::new(pts, EpochTag::Pc2).with_labels((0..n).map(|i| (i % 7) as u8).collect());
        let mut buf = Vec::new();
        write_ply(&cloud, &mut buf, PlyFormat::BinaryLittleEndian).unwrap();
        let back = read_ply(buf.as_slice()).unwrap();
        prop_assert_eq!(back.points, cloud.points);
        prop_assert_eq!(back.labels, cloud.labels);
    }

    #[test]
    fn cylinder_crop_matches_membership(pts in cloud_strategy(), cx in -20.0..20.0f64, cy in -20.0..20.0f64, r in 1.0..30.0f64) {
        let c1 = PointCloud::new(pts.clone(), EpochTag::Pc1);
        let c2 = PointCloud::new(pts.clone(), EpochTag::Pc2);
        let inside = pts.iter().filter(|p| in_cylinder(p, [cx, cy], r)).count();
        match extract_cylinder_pair(&c1, &c2, [cx, cy], r) {
            Ok(pair) => {
                prop_assert_eq!(pair.sub1.len(), inside);
                prop_assert_eq!(pair.sub2.len(), inside);
            }
            Err(_) => prop_assert_eq!(inside, 0),
        }
    }
}
