mod common;

use bayes_uq::calibration::{
    boxplot_stats, mean_and_ci, retained_count, retention_curve, retention_order, Z_95,
};
use bayes_uq::metrics::{auc, average_precision, d_prime, normal_cdf, normal_quantile};
use bayes_uq::tensor_io::LabelSet;
use bayes_uq::uncertainty::{binary_entropy, categorical_entropy, decompose};
use bayes_uq::{McPredictions, Measure, Task};
use common::random_predictions;
use ndarray::{Array3, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn task_strategy() -> impl Strategy<Value = Task> {
    prop_oneof![Just(Task::Multiclass), Just(Task::Multilabel)]
}

fn preds_strategy() -> impl Strategy<Value = McPredictions> {
    (task_strategy(), 1usize..12, 1usize..10, 2usize..10, any::<u64>()).prop_map(
        |(task, m, n, c, seed)| random_predictions(task, m, n, c, &mut ChaCha8Rng::seed_from_u64(seed)),
    )
}

/// Area under the empirical ROC curve by the trapezoid rule.
fn trapezoid_auc(scores: &[f64], positives: &[bool]) -> f64 {
    let n_pos = positives.iter().filter(|&&p| p).count() as f64;
    let n_neg = positives.len() as f64 - n_pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut area, mut prev) = (0.0, (0.0, 0.0));
    for t in thresholds {
        let tp = scores.iter().zip(positives).filter(|(&s, &p)| p && s >= t).count() as f64;
        let fp = scores.iter().zip(positives).filter(|(&s, &p)| !p && s >= t).count() as f64;
        let point = (fp / n_neg, tp / n_pos);
        area += (point.0 - prev.0) * (point.1 + prev.1) / 2.0;
        prev = point;
    }
    area
}

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..9).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![(0u8..4).prop_map(|k| k as f64 / 4.0), 0.0f64..1.0], n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #[test]
    fn decomposition_identity_and_sign(preds in preds_strategy()) {
        let t = decompose(&preds);
        let c = preds.classes() as f64;
        let bound = match preds.task() {
            Task::Multiclass => c.ln(),
            Task::Multilabel => c * std::f64::consts::LN_2,
        };
        for i in 0..t.len() {
            prop_assert!((t.total[i] - t.aleatoric[i] - t.epistemic[i]).abs() <= 1e-9);
            prop_assert!(t.epistemic[i] >= -1e-12);
            prop_assert!(t.aleatoric[i] >= -1e-15);
            prop_assert!(t.total[i] <= bound + 1e-12);
            prop_assert!(t.epistemic[i] <= t.total[i] + 1e-12);
        }
    }

    #[test]
    fn class_permutation_leaves_uncertainty_unchanged(preds in preds_strategy(), shift in 1usize..9) {
        let c = preds.classes();
        let perm: Vec<usize> = (0..c).map(|k| (k + shift) % c).collect();
        let permuted = McPredictions::new(preds.probs().select(Axis(2), &perm), preds.task()).unwrap();
        let (a, b) = (decompose(&preds), decompose(&permuted));
        for i in 0..a.len() {
            prop_assert!((a.total[i] - b.total[i]).abs() < 1e-12);
            prop_assert!((a.aleatoric[i] - b.aleatoric[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_order_is_irrelevant(preds in preds_strategy()) {
        let m = preds.samples();
        let rev: Vec<usize> = (0..m).rev().collect();
        let (a, b) = (decompose(&preds), decompose(&preds.select_samples(&rev)));
        for i in 0..a.len() {
            prop_assert!((a.epistemic[i] - b.epistemic[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_has_no_epistemic(preds in preds_strategy()) {
        let one = preds.select_samples(&[0]);
        let t = decompose(&one);
        prop_assert!(t.epistemic.iter().all(|e| e.abs() <= 1e-12));
    }

    #[test]
    fn one_label_matches_two_class_softmax(ps in prop::collection::vec(0.0f64..=1.0, 1..12)) {
        let m = ps.len();
        let ml = Array3::from_shape_fn((m, 1, 1), |(s, _, _)| ps[s]);
        let mc = Array3::from_shape_fn((m, 1, 2), |(s, _, k)| if k == 0 { ps[s] } else { 1.0 - ps[s] });
        let a = decompose(&McPredictions::new(ml, Task::Multilabel).unwrap());
        let b = decompose(&McPredictions::new(mc, Task::Multiclass).unwrap());
        prop_assert!((a.total[0] - b.total[0]).abs() < 1e-12);
        prop_assert!((a.aleatoric[0] - b.aleatoric[0]).abs() < 1e-12);
    }

    #[test]
    fn binary_entropy_is_symmetric(p in 0.0f64..=1.0) {
        let h = binary_entropy(p).unwrap();
        prop_assert!((h - binary_entropy(1.0 - p).unwrap()).abs() < 1e-15);
        prop_assert!((h - categorical_entropy(&[p, 1.0 - p])).abs() < 1e-15);
    }

    #[test]
    fn auc_flips_with_labels((scores, labels) in labeled_scores()) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((a + auc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_monotone_transforms((scores, labels) in labeled_scores()) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&warped, &labels).unwrap());
        prop_assert_eq!(
            average_precision(&scores, &labels).unwrap(),
            average_precision(&warped, &labels).unwrap()
        );
    }

    #[test]
    fn mann_whitney_matches_trapezoid_roc((scores, labels) in labeled_scores()) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        prop_assert!((auc(&scores, &labels).unwrap() - trapezoid_auc(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn average_precision_is_a_fraction((scores, labels) in labeled_scores()) {
        prop_assume!(labels.iter().any(|&l| l));
        let ap = average_precision(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0 + 1e-15).contains(&ap));
    }

    #[test]
    fn quantile_inverts_cdf(p in 1e-12f64..(1.0 - 1e-12)) {
        let x = normal_quantile(p).unwrap();
        prop_assert!((normal_cdf(x) - p).abs() <= 1e-13 * p.min(1.0 - p) + 4.0 * f64::EPSILON);
        // The statrs routines are only good to about 1e-11 here.
        let oracle = Normal::standard();
        prop_assert!((oracle.inverse_cdf(p) - x).abs() <= 1e-9 * x.abs().max(1.0));
        prop_assert!((normal_cdf(x) - oracle.cdf(x)).abs() < 1e-10);
    }

    #[test]
    fn d_prime_is_monotone(a in 0.01f64..0.98, gap in 1e-6f64..0.01) {
        prop_assert!(d_prime(a + gap).unwrap() > d_prime(a).unwrap());
    }

    #[test]
    fn retained_sets_are_nested(u in prop::collection::vec(0.0f64..1.0, 1..40)) {
        let order = retention_order(&u);
        let mut prev = 0;
        for k in 1..=20 {
            let n = retained_count(k as f64 / 20.0, u.len());
            prop_assert!(n >= prev);
            prev = n;
        }
        prop_assert_eq!(prev, u.len());
        for w in order.windows(2) {
            prop_assert!(u[w[0]] <= u[w[1]]);
        }
    }

    #[test]
    fn retention_curve_is_deterministic(seed in any::<u64>(), rseed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds = random_predictions(Task::Multiclass, 5, 12, 3, &mut rng);
        let labels = LabelSet::multiclass((0..12).map(|i| i % 3).collect(), 3).unwrap();
        let fractions = [0.25, 0.5, 1.0];
        let a = retention_curve(&preds, &labels, Measure::Entropy, &fractions, 4, rseed).unwrap();
        let b = retention_curve(&preds, &labels, Measure::Entropy, &fractions, 4, rseed).unwrap();
        prop_assert_eq!(&a, &b);
        // The full set does not depend on the sort order.
        let c = retention_curve(&preds, &labels, Measure::Epistemic, &fractions, 4, rseed).unwrap();
        prop_assert!((a.metric_mean[2] - c.metric_mean[2]).abs() < 1e-15);
    }

    #[test]
    fn box_stats_are_ordered(v in prop::collection::vec(-1e3f64..1e3, 1..60)) {
        let b = boxplot_stats(&v).unwrap();
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= b.whisker_lo && b.whisker_lo <= b.q1);
        prop_assert!(b.q1 <= b.median && b.median <= b.q3);
        prop_assert!(b.q3 <= b.whisker_hi && b.whisker_hi <= max);
        prop_assert_eq!(b.n, v.len());
    }
}

#[test]
fn ci_half_width_shrinks_with_root_r() {
    for r in [4usize, 16, 64, 256] {
        let values: Vec<f64> = (0..r).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (mean, half) = mean_and_ci(&values);
        assert_eq!(mean, 0.0);
        let sd = (r as f64 / (r as f64 - 1.0)).sqrt();
        assert!((half - Z_95 * sd / (r as f64).sqrt()).abs() < 1e-12);
    }
    assert_eq!(mean_and_ci(&[0.3]), (0.3, 0.0));
}

#[test]
fn retained_count_absorbs_rounding() {
    assert_eq!(retained_count(0.15, 20), 3);
    assert_eq!(retained_count(0.05, 1), 1);
    assert_eq!(retained_count(0.3, 10), 3);
    assert_eq!(retained_count(0.31, 10), 4);
    assert_eq!(retained_count(1.0, 7), 7);
}
