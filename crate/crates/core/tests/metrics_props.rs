use inceptnet::metrics::{
    confusion, jaccard, jaccard_from_counts, roc_auc, scalar_metrics, ConfusionCounts, MetricsReport,
};
use inceptnet::{Shape4, Tensor4};
use proptest::prelude::*;

/// Mann-Whitney statistic: P(score_pos > score_neg) with ties counted half.
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    let (mut wins, mut pairs) = (0.0, 0.0);
    for &si in &pos {
        for &sj in &neg {
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn mask(bits: &[bool]) -> Tensor4 {
    Tensor4::from_vec(
        Shape4::new(1, 1, bits.len(), 1),
        bits.iter().map(|&b| f64::from(u8::from(b))).collect(),
    )
    .unwrap()
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=200).prop_flat_map(|n| {
        (
            // coarse grid so ties are common
            prop::collection::vec((0u8..20).prop_map(|k| k as f64 / 19.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_filter("both classes", |(_, l)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
    })
}

fn counts() -> impl Strategy<Value = ConfusionCounts> {
    (0u64..50, 0u64..50, 0u64..50, 0u64..50).prop_map(|(tp, fp, tn, fn_)| ConfusionCounts { tp, fp, tn, fn_ })
}

#[test]
fn hand_counted_case_is_exact() {
    let c = ConfusionCounts { tp: 2, fp: 1, tn: 5, fn_: 2 };
    let m = scalar_metrics(&c);
    assert_eq!(m.accuracy, 0.7);
    assert_eq!(m.sensitivity, 0.5);
    assert_eq!(m.specificity, 5.0 / 6.0);
    // harmonic-mean form, so one rounding away from 4/7
    assert!((m.f1 - 4.0 / 7.0).abs() <= f64::EPSILON);
    assert!((m.specificity - 0.8333).abs() < 5e-5);
    assert!((m.f1 - 0.5714).abs() < 5e-5);
}

#[test]
fn hand_counted_masks_match_counts() {
    let p = mask(&[true, true, true, false, false, false, false, false, false, false]);
    let t = mask(&[true, true, false, true, true, false, false, false, false, false]);
    assert_eq!(confusion(&p, &t).unwrap(), ConfusionCounts { tp: 2, fp: 1, tn: 5, fn_: 2 });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn trapezoid_auc_equals_pairwise((scores, labels) in scored_labels()) {
        let roc = roc_auc(&scores, &labels).unwrap();
        prop_assert!((roc.auc - pairwise_auc(&scores, &labels)).abs() <= 1e-9);
    }

    #[test]
    fn jaccard_is_f1_over_two_minus_f1(bits in prop::collection::vec((any::<bool>(), any::<bool>()), 1..300)) {
        prop_assume!(bits.iter().any(|&(a, b)| a || b));
        let p = mask(&bits.iter().map(|b| b.0).collect::<Vec<_>>());
        let t = mask(&bits.iter().map(|b| b.1).collect::<Vec<_>>());
        let f1 = scalar_metrics(&confusion(&p, &t).unwrap()).f1;
        let (js, flagged) = jaccard(&p, &t).unwrap();
        prop_assert!(!flagged);
        prop_assert!((js - f1 / (2.0 - f1)).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn every_metric_in_unit_interval(c in counts()) {
        prop_assume!(c.total() > 0);
        let r = MetricsReport::from_counts(c, None);
        for v in [r.accuracy, r.sensitivity, r.specificity, r.precision, r.f1, r.jaccard] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn f1_count_form_matches_harmonic_mean(c in counts()) {
        let m = scalar_metrics(&c);
        let denom = 2 * c.tp + c.fp + c.fn_;
        let direct = if denom == 0 { 0.0 } else { 2.0 * c.tp as f64 / denom as f64 };
        prop_assert!((m.f1 - direct).abs() <= 1e-12);
        prop_assert_eq!(m.degenerate.f1, m.precision + m.sensitivity == 0.0);
    }

    #[test]
    fn roc_points_are_monotone((scores, labels) in scored_labels()) {
        let roc = roc_auc(&scores, &labels).unwrap();
        prop_assert_eq!(roc.points.first().copied(), Some((0.0, 0.0)));
        prop_assert_eq!(roc.points.last().copied(), Some((1.0, 1.0)));
        for w in roc.points.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        prop_assert!((0.0..=1.0).contains(&roc.auc));
    }

    #[test]
    fn metrics_ignore_joint_permutation((scores, labels) in scored_labels(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let s2: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
        let l2: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap().auc, roc_auc(&s2, &l2).unwrap().auc);
        let pred = |s: &[f64]| mask(&s.iter().map(|&v| v >= 0.5).collect::<Vec<_>>());
        prop_assert_eq!(
            confusion(&pred(&scores), &mask(&labels)).unwrap(),
            confusion(&pred(&s2), &mask(&l2)).unwrap()
        );
    }
}

#[test]
fn empty_union_jaccard_is_one_and_flagged() {
    let (js, flagged) = jaccard_from_counts(&ConfusionCounts { tp: 0, fp: 0, tn: 9, fn_: 0 });
    assert_eq!(js, 1.0);
    assert!(flagged);
}
