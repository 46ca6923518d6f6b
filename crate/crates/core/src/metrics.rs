//! Classification metrics: accuracy, macro-averaged average precision and
//! ROC AUC, and the d-prime separation index derived from AUC.

use std::cmp::Ordering;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor_io::{LabelSet, McPredictions, Task};
use crate::uncertainty::{mean_probabilities, MeanProbabilities};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Complementary error function.
///
/// Taylor series of `erf` for `|z| < 2`, Lentz-evaluated continued fraction
/// beyond. Accurate to roughly 1e-15 absolute everywhere.
pub fn erfc(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z.abs() < 2.0 {
        let z2 = z * z;
        let mut term = z;
        let mut sum = z;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -z2 / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        return 1.0 - 2.0 * FRAC_1_SQRT_PI * sum;
    }
    if z < 0.0 {
        return 2.0 - erfc(-z);
    }
    if z > 27.0 {
        return 0.0;
    }
    // erfc(z) = exp(-z^2)/sqrt(pi) / (z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
    let tiny = 1e-300;
    let mut f = z;
    let mut c = z;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = z + a * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = z + a / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-z * z).exp() * FRAC_1_SQRT_PI / f
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function.
///
/// Acklam's rational approximation (relative error about 1e-9) followed by
/// one Halley step against [`normal_cdf`].
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile needs p in (0, 1), got {p}")));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let mut x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };

    let e = normal_cdf(x) - p;
    let u = e * SQRT_2PI * (x * x / 2.0).exp();
    x -= u / (1.0 + x * u / 2.0);
    Ok(x)
}

/// Fraction of items whose arg-max mean probability equals the label.
/// Ties go to the lowest class index.
pub fn accuracy(mean: &MeanProbabilities, labels: &LabelSet) -> Result<f64> {
    let LabelSet::Multiclass { labels, .. } = labels else {
        return Err(Error::TaskMismatch {
            expected: Task::Multiclass.to_string(),
            found: Task::Multilabel.to_string(),
        });
    };
    if labels.len() != mean.items() {
        return Err(Error::Shape(format!(
            "{} labels for {} items",
            labels.len(),
            mean.items()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("accuracy over zero items".into()));
    }
    let correct = mean
        .probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| argmax(row.iter().copied()) == label)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

fn check_lengths(scores: &[f64], positives: &[bool]) -> Result<()> {
    if scores.len() != positives.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            positives.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Domain(format!("score {s} is not a number")));
    }
    Ok(())
}

/// Step-integrated average precision. Items with equal scores enter the
/// ranking together.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Result<f64> {
    check_lengths(scores, positives)?;
    let total_pos = positives.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return Err(Error::NoPositives);
    }
    let order = descending(scores);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        while i < order.len() && scores[order[i]] == score {
            tp += positives[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// ROC AUC as the normalized Mann-Whitney statistic, ties counted as half.
pub fn auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    check_lengths(scores, positives)?;
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Sum of mid-ranks (1-based) of the positive items.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid_rank * order[i..j].iter().filter(|&&k| positives[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// `sqrt(2) * quantile(auc)`.
pub fn d_prime(auc: f64) -> Result<f64> {
    if !(auc > 0.0 && auc < 1.0) {
        return Err(Error::Domain(format!("d-prime is infinite at AUC {auc}")));
    }
    Ok(std::f64::consts::SQRT_2 * normal_quantile(auc)?)
}

fn finite_or_tag<S: Serializer>(value: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if value.is_finite() {
        s.serialize_f64(*value)
    } else if *value > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    /// Only defined for multi-class labels.
    pub accuracy: Option<f64>,
    pub map_macro: f64,
    pub auc_macro: f64,
    /// `inf` or `-inf` when `auc_macro` is exactly 1 or 0.
    #[serde(serialize_with = "finite_or_tag")]
    pub d_prime: f64,
    pub d_prime_saturated: bool,
    /// `None` for classes excluded from the AP average.
    pub per_class_ap: Vec<Option<f64>>,
    /// `None` for classes excluded from the AUC average.
    pub per_class_auc: Vec<Option<f64>>,
    /// Classes left out of at least one macro average.
    pub skipped_classes: Vec<usize>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per-class AP and AUC on the sample-averaged probabilities, macro-averaged
/// over the classes where they are defined.
pub fn macro_metrics(preds: &McPredictions, labels: &LabelSet) -> Result<MetricReport> {
    labels.check_pairing(preds)?;
    let mean = mean_probabilities(preds);
    macro_metrics_from_mean(&mean, labels)
}

pub fn macro_metrics_from_mean(mean: &MeanProbabilities, labels: &LabelSet) -> Result<MetricReport> {
    let indicator = labels.indicator();
    let classes = mean.classes();
    let mut per_class_ap = Vec::with_capacity(classes);
    let mut per_class_auc = Vec::with_capacity(classes);
    let mut skipped = Vec::new();
    for c in 0..classes {
        let scores = mean.probs.column(c).to_vec();
        let positives: Vec<bool> = indicator.column(c).iter().map(|&v| v == 1).collect();
        let ap = match average_precision(&scores, &positives) {
            Ok(v) => Some(v),
            Err(Error::NoPositives) => None,
            Err(e) => return Err(e),
        };
        let roc = match auc(&scores, &positives) {
            Ok(v) => Some(v),
            Err(Error::DegenerateClass) => None,
            Err(e) => return Err(e),
        };
        if ap.is_none() || roc.is_none() {
            skipped.push(c);
        }
        per_class_ap.push(ap);
        per_class_auc.push(roc);
    }
    let mean_of = |values: &[Option<f64>]| {
        let kept: Vec<f64> = values.iter().flatten().copied().collect();
        (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64)
    };
    let map_macro = mean_of(&per_class_ap).ok_or(Error::AllClassesSkipped)?;
    let auc_macro = mean_of(&per_class_auc).ok_or(Error::AllClassesSkipped)?;
    let (d_prime, d_prime_saturated) = match d_prime(auc_macro) {
        Ok(d) => (d, false),
        Err(_) if auc_macro >= 1.0 => (f64::INFINITY, true),
        Err(_) => (f64::NEG_INFINITY, true),
    };
    let accuracy = match labels.task() {
        Task::Multiclass => Some(accuracy(mean, labels)?),
        Task::Multilabel => None,
    };
    Ok(MetricReport {
        accuracy,
        map_macro,
        auc_macro,
        d_prime,
        d_prime_saturated,
        per_class_ap,
        per_class_auc,
        skipped_classes: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn mc(labels: &[usize], c: usize) -> LabelSet {
        LabelSet::multiclass(labels.to_vec(), c).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let m = MeanProbabilities { probs: array![[1.0, 0.0], [0.0, 1.0]] };
        assert_eq!(accuracy(&m, &mc(&[0, 1], 2)).unwrap(), 1.0);
        let tie = MeanProbabilities { probs: array![[0.5, 0.5]] };
        assert_eq!(accuracy(&tie, &mc(&[0], 2)).unwrap(), 1.0);
        let half = MeanProbabilities { probs: array![[0.4, 0.6], [0.7, 0.3]] };
        assert_eq!(accuracy(&half, &mc(&[0, 0], 2)).unwrap(), 0.5);
        let ml = LabelSet::multilabel(array![[1u8, 0]]).unwrap();
        assert!(matches!(accuracy(&tie, &ml), Err(Error::TaskMismatch { .. })));
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert_abs_diff_eq!(ap, 5.0 / 6.0, epsilon = 1e-15);
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.3], &[true]).unwrap(), 1.0);
        assert!(matches!(average_precision(&[0.3, 0.2], &[false, false]), Err(Error::NoPositives)));
    }

    #[test]
    fn ap_groups_ties() {
        // Both items enter together: precision 1/2 at recall 1.
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.2, 0.8, 0.3], &[true, false, false, true]).unwrap(), 0.75);
        assert_eq!(auc(&[0.4; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::DegenerateClass)));
        assert!(auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn d_prime_examples() {
        assert_abs_diff_eq!(d_prime(0.5).unwrap(), 0.0, epsilon = 1e-12);
        assert!((d_prime(0.971).unwrap() - 2.675).abs() < 0.02);
        assert!((d_prime(0.972).unwrap() - 2.708).abs() < 0.02);
        assert!(matches!(d_prime(1.0), Err(Error::Domain(_))));
        assert!(matches!(d_prime(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn quantile_reference_points() {
        // Values from a 40-digit evaluation of sqrt(2) * erfinv(2p - 1).
        assert_abs_diff_eq!(normal_quantile(0.975).unwrap(), 1.959_963_984_540_054, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_quantile(1e-6).unwrap(), -4.753_424_308_822_899, epsilon = 1e-10);
        assert_abs_diff_eq!(normal_quantile(0.02).unwrap(), -2.053_748_910_631_823, epsilon = 1e-12);
    }

    #[test]
    fn perfect_predictor_report() {
        let p = McPredictions::new(array![[[0.9, 0.1], [0.2, 0.8]]], Task::Multiclass).unwrap();
        let r = macro_metrics(&p, &mc(&[0, 1], 2)).unwrap();
        assert_eq!((r.map_macro, r.auc_macro, r.accuracy), (1.0, 1.0, Some(1.0)));
        assert!(r.d_prime_saturated && r.d_prime == f64::INFINITY);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["d_prime"], "inf");
    }

    #[test]
    fn class_without_positives_is_skipped() {
        let p = McPredictions::new(
            array![[[0.7, 0.2, 0.1], [0.3, 0.6, 0.1], [0.5, 0.2, 0.3]]],
            Task::Multiclass,
        )
        .unwrap();
        let r = macro_metrics(&p, &mc(&[0, 1, 0], 3)).unwrap();
        assert_eq!(r.skipped_classes, vec![2]);
        assert_eq!(r.per_class_ap[2], None);
        let kept = (r.per_class_ap[0].unwrap() + r.per_class_ap[1].unwrap()) / 2.0;
        assert_abs_diff_eq!(r.map_macro, kept, epsilon = 1e-15);
    }

    #[test]
    fn all_skipped_is_an_error() {
        let p = McPredictions::new(array![[[0.7, 0.2]]], Task::Multilabel).unwrap();
        let l = LabelSet::multilabel(array![[0u8, 0]]).unwrap();
        assert!(matches!(macro_metrics(&p, &l), Err(Error::AllClassesSkipped)));
    }
}
