use kpchange::cloud::SpatialIndex;
use kpchange::features::{
    cloud_features, covariance, covariance_eigen, eigenfeatures, height_features, normal, stability, FeatureParams,
    STABILITY,
};
use kpchange::{EpochTag, Point3, PointCloud};
use proptest::prelude::*;

/// Cyclic Jacobi rotations on a symmetric 3x3 matrix; eigenvalues descending.
fn jacobi_eigenvalues(mut a: [[f64; 3]; 3]) -> [f64; 3] {
    for _ in 0..100 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        if off < 1e-30 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut b = a;
            for k in 0..3 {
                b[k][p] = c * a[k][p] - s * a[k][q];
                b[k][q] = s * a[k][p] + c * a[k][q];
            }
            let mut r = b;
            for k in 0..3 {
                r[p][k] = c * b[p][k] - s * b[q][k];
                r[q][k] = s * b[p][k] + c * b[q][k];
            }
            a = r;
        }
    }
    let mut v = [a[0][0], a[1][1], a[2][2]];
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

fn neighborhood() -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| [x, y, z]), 4..40)
}

fn rotate_z(p: &Point3, a: f64) -> Point3 {
    let (s, c) = a.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn eigensolver_matches_jacobi(pts in neighborhood()) {
        let e = covariance_eigen(&pts).unwrap();
        let j = jacobi_eigenvalues(covariance(&pts));
        for i in 0..3 {
            prop_assert!((e.values[i] - j[i].max(0.0)).abs() <= 1e-8, "{:?} vs {:?}", e.values, j);
        }
        prop_assert!(e.values[0] >= e.values[1] && e.values[1] >= e.values[2] && e.values[2] >= 0.0);
    }

    #[test]
    fn dimensionality_identity(pts in neighborhood()) {
        let e = covariance_eigen(&pts).unwrap();
        let f = eigenfeatures(&e).unwrap();
        let sum = f.linearity + f.planarity + e.values[2] / e.values[0];
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(f.omnivariance.is_finite());
    }

    #[test]
    fn translation_and_rotation_invariance(pts in neighborhood(), t in (-100.0..100.0f64, -100.0..100.0f64, -10.0..10.0f64), a in 0.0..6.283f64) {
        let base = covariance_eigen(&pts).unwrap();
        let bf = eigenfeatures(&base).unwrap();
        let moved: Vec<Point3> = pts.iter().map(|p| [p[0] + t.0, p[1] + t.1, p[2] + t.2]).collect();
        let m = covariance_eigen(&moved).unwrap();
        let mf = eigenfeatures(&m).unwrap();
        let scale = base.values[0].max(1e-12);
        for i in 0..3 {
            prop_assert!((m.values[i] - base.values[i]).abs() <= 1e-9 * scale * 1e3);
        }
        prop_assert!((mf.linearity - bf.linearity).abs() < 1e-6);
        prop_assert!((mf.planarity - bf.planarity).abs() < 1e-6);
        let rotated: Vec<Point3> = pts.iter().map(|p| rotate_z(p, a)).collect();
        let r = covariance_eigen(&rotated).unwrap();
        for i in 0..3 {
            prop_assert!((r.values[i] - base.values[i]).abs() <= 1e-9 * scale.max(1.0));
        }
        // the normal turns with the frame when it is well defined
        let (nb, nr) = (normal(&base), normal(&r));
        if !nb.ambiguous && base.values[1] - base.values[2] > 1e-3 * scale {
            let expect = rotate_z(&nb.vector, a);
            let dot: f64 = (0..3).map(|k| expect[k] * nr.vector[k]).sum();
            prop_assert!((dot.abs() - 1.0).abs() < 1e-6, "{dot}");
        }
    }

    #[test]
    fn z_rank_is_a_bijection(zs in prop::collection::hash_set(-1000i32..1000, 2..30)) {
        let pts: Vec<Point3> = zs.iter().enumerate().map(|(i, &z)| [i as f64, 0.0, z as f64 * 0.01]).collect();
        let all: Vec<usize> = (0..pts.len()).collect();
        let mut ranks: Vec<usize> = (0..pts.len()).map(|c| height_features(&pts, c, &all).1).collect();
        ranks.sort_unstable();
        prop_assert_eq!(ranks, all);
    }

    #[test]
    fn stability_bounded_and_features_finite(a in neighborhood(), b in neighborhood()) {
        let c1 = PointCloud::new(a, EpochTag::Pc1);
        let c2 = PointCloud::new(b, EpochTag::Pc2);
        let (f, _) = cloud_features(&c1, &c2, &FeatureParams { k: 5, ..Default::default() }).unwrap();
        for i in 0..f.rows() {
            prop_assert!(f.row(i).iter().all(|v| v.is_finite()));
            prop_assert!((0.0..=100.0).contains(&f.row(i)[STABILITY]));
        }
    }
}

#[test]
fn analytic_gates() {
    let line: Vec<Point3> = (0..10).map(|i| [i as f64 * 0.3, i as f64 * 0.6, i as f64 * -0.2]).collect();
    let f = eigenfeatures(&covariance_eigen(&line).unwrap()).unwrap();
    assert!(f.linearity >= 1.0 - 1e-9);

    let grid: Vec<Point3> = (0..25).map(|i| [(i % 5) as f64, (i / 5) as f64, 2.0]).collect();
    let e = covariance_eigen(&grid).unwrap();
    assert!(e.values[2] <= 1e-12);
    assert!(eigenfeatures(&e).unwrap().planarity >= 1.0 - 1e-6);

    let plane: Vec<Point3> = (0..41 * 41).map(|i| [(i % 41) as f64 * 0.5, (i / 41) as f64 * 0.5, 0.0]).collect();
    let c1 = PointCloud::new(plane.clone(), EpochTag::Pc1);
    let c2 = PointCloud::new(plane.clone(), EpochTag::Pc2);
    let (f2, _) = cloud_features(&c2, &c1, &FeatureParams::default()).unwrap();
    for (i, p) in plane.iter().enumerate() {
        if (5.0..=15.0).contains(&p[0]) && (5.0..=15.0).contains(&p[1]) {
            assert!((99.0..=100.0).contains(&f2.row(i)[STABILITY]));
        }
    }
    let index = SpatialIndex::build(&plane).unwrap();
    assert_eq!(stability(&[10.0, 10.0, 15.0], &index, 5.0).unwrap(), 0.0);
}
