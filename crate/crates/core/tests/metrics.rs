use kpchange::metrics::ConfusionMatrix;
use proptest::prelude::*;

fn labels(n: usize) -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (prop::collection::vec(0u8..7, n), prop::collection::vec(0u8..7, n))
}

#[test]
fn hand_counted_matrix() {
    // truth rows, prediction columns
    let counts = vec![
        vec![50, 2, 0, 0, 0, 0, 3],
        vec![4, 10, 0, 0, 0, 0, 0],
        vec![0, 0, 6, 0, 0, 0, 0],
        vec![0, 0, 0, 8, 2, 0, 0],
        vec![0, 0, 0, 1, 9, 0, 0],
        vec![1, 0, 0, 0, 0, 3, 0],
        vec![0, 0, 0, 0, 0, 0, 5],
    ];
    let cm = ConfusionMatrix::from_counts(&counts);
    let iou = cm.per_class_iou();
    assert_eq!(iou[1], Some(10.0 / 16.0));
    assert_eq!(iou[2], Some(1.0));
    assert_eq!(iou[3], Some(8.0 / 11.0));
    assert_eq!(iou[4], Some(9.0 / 12.0));
    assert_eq!(iou[5], Some(3.0 / 4.0));
    assert_eq!(iou[6], Some(5.0 / 8.0));
    let expect_miou = (10.0 / 16.0 + 1.0 + 8.0 / 11.0 + 9.0 / 12.0 + 3.0 / 4.0 + 5.0 / 8.0) / 6.0;
    assert!((cm.miou_ch().unwrap() - expect_miou).abs() < 1e-15);
    let recall = [50.0 / 55.0, 10.0 / 14.0, 1.0, 0.8, 0.9, 0.75, 1.0];
    assert!((cm.macc().unwrap() - recall.iter().sum::<f64>() / 7.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn iou_bounded_by_recall((t, p) in labels(200)) {
        let mut cm = ConfusionMatrix::new(7);
        cm.accumulate(&t, &p).unwrap();
        for (iou, recall) in cm.per_class_iou().into_iter().zip(cm.per_class_recall()) {
            if let (Some(i), Some(r)) = (iou, recall) {
                prop_assert!((0.0..=1.0).contains(&i) && i <= r + 1e-15 && r <= 1.0);
            }
        }
    }

    #[test]
    fn accumulate_is_additive((t, p) in labels(120), split in 0usize..120) {
        let mut whole = ConfusionMatrix::new(7);
        whole.accumulate(&t, &p).unwrap();
        let (mut a, mut b) = (ConfusionMatrix::new(7), ConfusionMatrix::new(7));
        a.accumulate(&t[..split], &p[..split]).unwrap();
        b.accumulate(&t[split..], &p[split..]).unwrap();
        a += &b;
        prop_assert_eq!(a, whole);
    }

    #[test]
    fn change_class_relabelling_is_invariant((t, p) in labels(150), perm in Just((1u8..7).collect::<Vec<_>>()).prop_shuffle()) {
        // unchanged stays 0; change ids are permuted among themselves
        let map = |l: u8| if l == 0 { 0 } else { perm[(l - 1) as usize] };
        let mut a = ConfusionMatrix::new(7);
        a.accumulate(&t, &p).unwrap();
        let (t2, p2): (Vec<u8>, Vec<u8>) = (t.iter().map(|&l| map(l)).collect(), p.iter().map(|&l| map(l)).collect());
        let mut b = ConfusionMatrix::new(7);
        b.accumulate(&t2, &p2).unwrap();
        let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        prop_assert!(close(a.miou_ch(), b.miou_ch()));
        prop_assert!(close(a.macc(), b.macc()));
    }
}

#[test]
fn perfect_prediction_scores_one() {
    let t: Vec<u8> = (0..70).map(|i| (i % 7) as u8).collect();
    let mut cm = ConfusionMatrix::new(7);
    cm.accumulate(&t, &t).unwrap();
    assert_eq!(cm.miou_ch(), Some(1.0));
    assert_eq!(cm.macc(), Some(1.0));
}
