use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::imaging::Raster;
use crate::model::ClassifierSpec;

fn bx(x0: u32, y0: u32, x1: u32, y1: u32) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

fn det(id: &str, b: BoundingBox) -> Detection {
    Detection {
        patch_id: id.into(),
        bbox: b,
        mean_difference: 0.5,
        label: None,
        score: None,
        grid: None,
    }
}

fn gt(id: &str, b: BoundingBox) -> GroundTruth {
    GroundTruth {
        patch_id: id.into(),
        bbox: b,
        label: "x".into(),
    }
}

/// IoU by counting pixels of the rasterized boxes.
fn pixel_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for y in a.y_min.min(b.y_min)..a.y_max.max(b.y_max) {
        for x in a.x_min.min(b.x_min)..a.x_max.max(b.x_max) {
            let (ia, ib) = (a.contains(x, y), b.contains(x, y));
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    inter as f64 / union as f64
}

#[test]
fn iou_examples() {
    let a = bx(0, 0, 10, 10);
    assert_eq!(iou(&a, &a), 1.0);
    assert_eq!(iou(&a, &bx(10, 0, 20, 10)), 0.0);
    assert!((iou(&a, &bx(5, 5, 15, 15)) - 25.0 / 175.0).abs() < 1e-12);
}

#[test]
fn iou_matches_pixel_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rand_box = || {
        let x0 = rng.random_range(0..40);
        let y0 = rng.random_range(0..40);
        bx(x0, y0, x0 + rng.random_range(1..30), y0 + rng.random_range(1..30))
    };
    for _ in 0..200 {
        let (a, b) = (rand_box(), rand_box());
        assert!((iou(&a, &b) - pixel_iou(&a, &b)).abs() < 1e-12);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }
}

#[test]
fn matching_examples() {
    let g = [bx(0, 0, 10, 10)];
    // IoU 0.5
    let m = match_detections(&[bx(0, 0, 10, 5)], &g, 0.3);
    assert_eq!(m.n_correct(), 1);

    let m = match_detections(&[bx(0, 0, 10, 9), bx(0, 0, 10, 10)], &g, 0.3);
    assert_eq!(m.n_correct(), 1);
    assert_eq!(m.pairs[0].0, 1, "best IoU wins");
    assert_eq!(m.unmatched_predictions, vec![0]);

    let m = match_detections(&[], &g, 0.3);
    assert_eq!((m.n_correct(), m.missed_ground_truths.clone()), (0, vec![0]));
}

#[test]
fn correctness_is_strictly_above_threshold() {
    let g = [bx(0, 0, 10, 10)];
    let p = [bx(0, 0, 10, 5)];
    assert_eq!(match_detections(&p, &g, 0.5).n_correct(), 0);
    assert_eq!(match_detections(&p, &g, 0.49).n_correct(), 1);
}

#[test]
fn detection_rate_examples() {
    let r = EvalReport::from_counts(447, 447, 0.3);
    assert_eq!(r.detection_rate, 1.0);
    let r = EvalReport::from_counts(370, 447, 0.3);
    assert!((r.detection_rate - 0.8277).abs() < 5e-5);
    let r = EvalReport::from_counts(0, 0, 0.3);
    assert_eq!(r.detection_rate, 0.0);
    assert!(r.empty);
}

#[test]
fn evaluate_groups_by_patch_and_counts_false_positives() {
    let preds = [
        det("a", bx(0, 0, 10, 10)),
        det("b", bx(50, 50, 60, 60)),
        det("c", bx(0, 0, 4, 4)),
    ];
    let gts = [gt("a", bx(1, 1, 10, 10)), gt("b", bx(0, 0, 10, 10))];
    let r = evaluate(&preds, &gts, 0.3);
    assert_eq!((r.n_ground_truth, r.n_correct, r.false_positives), (2, 1, 2));
    assert_eq!(r.patches.len(), 3);
    let mut reversed = preds.to_vec();
    reversed.reverse();
    assert_eq!(evaluate(&reversed, &gts, 0.3).detection_rate, r.detection_rate);
}

#[test]
fn single_point_sweep_equals_detection_rate() {
    let preds = [det("a", bx(0, 0, 10, 8))];
    let gts = [gt("a", bx(0, 0, 10, 10))];
    let c = threshold_sweep(&preds, &gts, &[0.3]).unwrap();
    assert_eq!(c.points, vec![(0.3, evaluate(&preds, &gts, 0.3).detection_rate)]);
    assert!(threshold_sweep(&preds, &gts, &[0.5, 0.3]).is_err());
    assert!(threshold_sweep(&preds, &gts, &[0.0]).is_err());
}

#[test]
fn sweep_table_has_two_columns() {
    let c = SweepCurve {
        points: vec![(0.1, 1.0), (0.2, 0.5)],
    };
    let mut buf = Vec::new();
    c.write_table(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().nth(1).unwrap().split_whitespace().count(), 2);
}

#[test]
fn label_independent_classifier_scores_near_chance() {
    let spec = ClassifierSpec::new(vec!["a".into(), "b".into()], 8);
    let model = Classifier::new(&spec, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let crops: Vec<LabeledCrop> = (0..1000)
        .map(|_| LabeledCrop {
            raster: Raster::filled(8, 8, [rng.random(), rng.random(), rng.random()]),
            class: rng.random_range(0..2),
        })
        .collect();
    let acc = classifier_accuracy(&model, &crops).unwrap();
    assert!((acc - 0.5).abs() <= 0.05, "{acc}");
    assert!(classifier_accuracy(&model, &[]).is_err());
}

proptest! {
    #[test]
    fn sweeps_never_increase(
        boxes in proptest::collection::vec((0u32..30, 0u32..30, 1u32..20, 1u32..20, 0usize..4, any::<bool>()), 1..30),
    ) {
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for (x, y, w, h, patch, is_pred) in boxes {
            let id = format!("p{patch}");
            let b = bx(x, y, x + w, y + h);
            if is_pred { preds.push(det(&id, b)) } else { gts.push(gt(&id, b)) }
        }
        let c = threshold_sweep(&preds, &gts, &default_sweep_thresholds()).unwrap();
        prop_assert!(c.is_non_increasing());
    }

    #[test]
    fn matching_is_one_to_one(
        preds in proptest::collection::vec((0u32..20, 0u32..20, 1u32..15, 1u32..15), 0..8),
        gts in proptest::collection::vec((0u32..20, 0u32..20, 1u32..15, 1u32..15), 0..8),
        t in 0.0f64..0.9,
    ) {
        let to_boxes = |v: &[(u32, u32, u32, u32)]| v.iter().map(|&(x, y, w, h)| bx(x, y, x + w, y + h)).collect::<Vec<_>>();
        let (p, g) = (to_boxes(&preds), to_boxes(&gts));
        let m = match_detections(&p, &g, t);
        let mut ps: Vec<_> = m.pairs.iter().map(|x| x.0).collect();
        let mut gs: Vec<_> = m.pairs.iter().map(|x| x.1).collect();
        ps.sort_unstable();
        ps.dedup();
        gs.sort_unstable();
        gs.dedup();
        prop_assert_eq!(ps.len(), m.pairs.len());
        prop_assert_eq!(gs.len(), m.pairs.len());
        prop_assert_eq!(m.pairs.len() + m.unmatched_predictions.len(), p.len());
        prop_assert!(m.pairs.iter().all(|&(_, _, v)| v > t));
    }

    #[test]
    fn iou_is_bounded_and_symmetric(a in (0u32..50, 0u32..50, 1u32..30, 1u32..30), b in (0u32..50, 0u32..50, 1u32..30, 1u32..30)) {
        let (a, b) = (bx(a.0, a.1, a.0 + a.2, a.1 + a.3), bx(b.0, b.1, b.0 + b.2, b.1 + b.3));
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
    }
}
