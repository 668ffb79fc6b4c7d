use std::f64::consts::PI;

use proptest::prelude::*;
use spwood::geometry::OrientedBox;
use spwood::losses::gradcheck::{central_difference, max_relative_error, DEFAULT_STEP};
use spwood::losses::*;

fn arb_params() -> impl Strategy<Value = FocalParams> {
    (0.05..0.95f64, 0.0..4.0f64, 0.05..1.0f64, 0.1..0.9f64)
        .prop_map(|(a, g, o, t)| FocalParams::new(a, g, o, t).unwrap())
}

fn arb_box() -> impl Strategy<Value = OrientedBox> {
    (0.0..30.0f64, 0.0..30.0f64, 1.0..12.0f64, 1.0..12.0f64, -1.5..1.5f64)
        .prop_map(|(cx, cy, w, h, t)| OrientedBox::new(cx, cy, w, h, t).unwrap())
}

/// Textbook focal loss on a negative, written out independently.
fn focal_negative(p: f64, alpha: f64, gamma: f64) -> f64 {
    -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
}

proptest! {
    #[test]
    fn omega_one_is_plain_focal(p in 0.001..0.999f64, params in arb_params()) {
        let plain = FocalParams { omega: 1.0, ..params };
        let v = sparse_cls_loss(p, SampleKind::Negative, &plain).unwrap().value;
        let expect = focal_negative(p, plain.alpha, plain.gamma);
        prop_assert!((v - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn negative_jump_at_threshold(params in arb_params()) {
        let thr = params.thr;
        let at = sparse_cls_loss(thr, SampleKind::Negative, &params).unwrap().value;
        let above = sparse_cls_loss(thr + 1e-12, SampleKind::Negative, &params).unwrap().value;
        let jump = at - above;
        prop_assert!((jump - (1.0 - params.omega) * at).abs() < 1e-9 * at.max(1.0));
    }

    #[test]
    fn cls_loss_nonnegative(p in 0.001..0.999f64, params in arb_params(), pos in any::<bool>()) {
        let kind = if pos { SampleKind::Positive } else { SampleKind::Negative };
        prop_assert!(sparse_cls_loss(p, kind, &params).unwrap().value >= 0.0);
    }

    #[test]
    fn angle_loss_ignores_full_periods(a in -1.5..1.5f64, o in -1.5..1.5f64, r in -1.5..1.5f64, k in -3i32..3) {
        let shift = PI * f64::from(k);
        for aug in [Augmentation::Flip, Augmentation::Rotate(r)] {
            let base = angle_loss(a, o, aug, 1.0).unwrap().value;
            let moved_a = angle_loss(a + shift, o, aug, 1.0).unwrap().value;
            let moved_o = angle_loss(a, o + shift, aug, 1.0).unwrap().value;
            prop_assert!((base - moved_a).abs() < 1e-9);
            prop_assert!((base - moved_o).abs() < 1e-9);
        }
    }

    #[test]
    fn overlap_is_permutation_invariant(boxes in prop::collection::vec(arb_box(), 2..6), rot in 0usize..6) {
        let base = gaussian_overlap_loss(&boxes).unwrap();
        let mut shuffled = boxes.clone();
        shuffled.rotate_left(rot % boxes.len());
        shuffled.reverse();
        let other = gaussian_overlap_loss(&shuffled).unwrap();
        prop_assert!((base.value - other.value).abs() < 1e-9 * base.value.max(1.0));
    }

    #[test]
    fn overlap_gradient_matches_differences(boxes in prop::collection::vec(arb_box(), 2..4)) {
        let x: Vec<f64> = boxes.iter().flat_map(|b| b.to_array()).collect();
        let f = |x: &[f64]| {
            let bs: Vec<OrientedBox> = x
                .chunks(5)
                .map(|c| OrientedBox::from_array([c[0], c[1], c[2], c[3], c[4]]))
                .collect();
            gaussian_overlap_loss(&bs).unwrap().value
        };
        let analytic = gaussian_overlap_loss(&boxes).unwrap().grad;
        let numeric = central_difference(f, &x, DEFAULT_STEP);
        prop_assert!(max_relative_error(&analytic, &numeric) < 1e-5);
    }

    #[test]
    fn watershed_gradient_matches_differences(b in arb_box(), tw in 1.0..40.0f64, th in 1.0..40.0f64) {
        let f = |x: &[f64]| {
            let p = OrientedBox { w: x[0], h: x[1], ..b };
            watershed_loss(&p, tw, th).unwrap().value
        };
        let analytic = watershed_loss(&b, tw, th).unwrap().grad;
        let numeric = central_difference(f, &[b.w, b.h], DEFAULT_STEP);
        prop_assert!(max_relative_error(&analytic, &numeric) < 1e-5);
    }

    #[test]
    fn watershed_loss_bounded(b in arb_box(), tw in 1.0..40.0f64, th in 1.0..40.0f64) {
        let v = watershed_loss(&b, tw, th).unwrap().value;
        prop_assert!((0.0..1.0).contains(&v));
    }

    #[test]
    fn supervised_total_is_linear(parts in prop::array::uniform6(0.0..10.0f64), k in 0usize..6, scale in 0.0..5.0f64) {
        let w = SupervisedWeights::default();
        let weights = [w.cls, w.cen, w.bbox, w.angle, w.overlap, w.watershed];
        let base = total_supervised_loss(&SupervisedParts::from_array(parts), &w);
        let mut bumped = parts;
        bumped[k] *= scale;
        let moved = total_supervised_loss(&SupervisedParts::from_array(bumped), &w);
        let expect = base + weights[k] * parts[k] * (scale - 1.0);
        prop_assert!((moved - expect).abs() < 1e-9 * base.max(1.0));
    }

    #[test]
    fn unsupervised_gradient_vanishes_for_matching_student(
        margins in prop::collection::vec(prop::array::uniform4(0.0..30.0f64), 1..5)
    ) {
        let n = margins.len();
        let t = PredictionTriple::new(vec![0.5; n], vec![0.5; n], margins.clone()).unwrap();
        let s = PredictionTriple::new(vec![0.5; n], vec![0.5; n], margins).unwrap();
        // Soft BCE at t = s = 0.5 is 2·ln 2 for the two terms; margins add nothing.
        let v = unsupervised_loss(&t, &s, 1.0).unwrap();
        prop_assert!((v.value - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        prop_assert!(v.grad.iter().all(|g| g.abs() < 1e-12));
    }
}

#[test]
fn supervised_weights_sum() {
    let total = total_supervised_loss(&SupervisedParts::from_array([1.0; 6]), &SupervisedWeights::default());
    assert!((total - 18.2).abs() < 1e-12);
}

#[test]
fn out_of_domain_confidence_rejected() {
    let p = FocalParams::default();
    assert!(sparse_cls_loss(1.0, SampleKind::Positive, &p).is_err());
    assert!(sparse_cls_loss(0.0, SampleKind::Negative, &p).is_err());
    assert!(FocalParams::new(0.25, 2.0, 0.0, 0.5).is_err());
}
