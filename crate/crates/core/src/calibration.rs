//! Calibration evaluation: metric-versus-retained-data curves and box-plot
//! summaries of uncertainty distributions.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{accuracy, macro_metrics_from_mean};
use crate::tensor_io::{LabelSet, McPredictions, Task};
use crate::uncertainty::{decompose, mean_probabilities, Measure, UncertaintyTriple};

/// z-value of a two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;
pub const DEFAULT_REPLICATIONS: usize = 20;
pub const CSV_HEADER: &str = "measure,fraction,metric_mean,ci_half_width,replications";

/// Twenty evenly spaced fractions 0.05, 0.10, ..., 1.00.
pub fn default_fractions() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionCurve {
    pub measure: Measure,
    pub fractions: Vec<f64>,
    pub metric_mean: Vec<f64>,
    pub ci_half_width: Vec<f64>,
    pub replications: usize,
}

impl RetentionCurve {
    pub fn write_csv_rows(&self, out: &mut String) {
        for k in 0..self.fractions.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.measure.as_str(),
                self.fractions[k],
                self.metric_mean[k],
                self.ci_half_width[k],
                self.replications
            )
            .expect("writing to a String");
        }
    }
}

/// CSV document with one block of rows per curve.
pub fn curves_to_csv(curves: &[RetentionCurve]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in curves {
        c.write_csv_rows(&mut out);
    }
    out
}

/// Item indices sorted by ascending uncertainty, ties broken by index.
pub fn retention_order(uncertainty: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..uncertainty.len()).collect();
    order.sort_by(|&a, &b| {
        uncertainty[a]
            .partial_cmp(&uncertainty[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Number of items kept at fraction `f` of `n`, i.e. `ceil(f * n)`.
pub fn retained_count(fraction: f64, n: usize) -> usize {
    // Absorb representation error such as 0.15 * 20 = 3.0000000000000004.
    let raw = fraction * n as f64;
    let k = (raw - 1e-9 * raw.max(1.0)).ceil();
    (k.max(0.0) as usize).min(n)
}

/// Mean and 95% half-width `1.96 * sd / sqrt(R)` using the sample standard
/// deviation. A single replication has half-width 0.
pub fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    let r = values.len();
    let mean = values.iter().sum::<f64>() / r as f64;
    if r < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
    (mean, Z_95 * var.sqrt() / (r as f64).sqrt())
}

fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::EmptyInput("no retention fractions".into()));
    }
    for w in fractions.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Domain("fractions must be strictly ascending".into()));
        }
    }
    if let Some(f) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::Domain(format!("fraction {f} outside (0, 1]")));
    }
    Ok(())
}

/// Metric used on the retained items: accuracy for multi-class labels,
/// macro mAP for multi-label labels.
fn retained_metric(preds: &McPredictions, labels: &LabelSet, kept: &[usize]) -> Result<f64> {
    let mean = mean_probabilities(&preds.select_items(kept));
    let labels = labels.select(kept);
    match labels.task() {
        Task::Multiclass => accuracy(&mean, &labels),
        Task::Multilabel => Ok(macro_metrics_from_mean(&mean, &labels)?.map_macro),
    }
}

/// Metric values at each fraction for one set of predictions.
pub fn retention_profile(
    preds: &McPredictions,
    labels: &LabelSet,
    measure: Measure,
    fractions: &[f64],
) -> Result<Vec<f64>> {
    let triple = decompose(preds);
    let order = retention_order(triple.measure(measure));
    fractions
        .iter()
        .map(|&f| {
            let k = retained_count(f, order.len());
            if k == 0 {
                return Err(Error::EmptyRetained(f));
            }
            retained_metric(preds, labels, &order[..k])
        })
        .collect()
}

/// Draw `M` sample indices with replacement.
pub fn bootstrap_samples(m: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m).map(|_| rng.random_range(0..m)).collect()
}

/// Metric-versus-retained-fraction curve averaged over bootstrap
/// replications of the Monte-Carlo sample axis. Replication `r` is seeded
/// with `seed + r`.
pub fn retention_curve(
    preds: &McPredictions,
    labels: &LabelSet,
    measure: Measure,
    fractions: &[f64],
    replications: usize,
    seed: u64,
) -> Result<RetentionCurve> {
    labels.check_pairing(preds)?;
    validate_fractions(fractions)?;
    if replications == 0 {
        return Err(Error::Domain("need at least one replication".into()));
    }
    let profiles = (0..replications)
        .into_par_iter()
        .map(|r| {
            let idx = bootstrap_samples(preds.samples(), seed.wrapping_add(r as u64));
            retention_profile(&preds.select_samples(&idx), labels, measure, fractions)
        })
        .collect::<Result<Vec<_>>>()?;

    let (metric_mean, ci_half_width) = (0..fractions.len())
        .map(|k| mean_and_ci(&profiles.iter().map(|p| p[k]).collect::<Vec<_>>()))
        .unzip();
    Ok(RetentionCurve {
        measure,
        fractions: fractions.to_vec(),
        metric_mean,
        ci_half_width,
        replications,
    })
}

/// Average curves computed on separate folds point by point. The interval
/// is taken across folds.
pub fn average_fold_curves(curves: &[RetentionCurve]) -> Result<RetentionCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::EmptyInput("no fold curves".into()))?;
    if curves
        .iter()
        .any(|c| c.fractions != first.fractions || c.measure != first.measure)
    {
        return Err(Error::Shape("fold curves disagree on fractions or measure".into()));
    }
    let (metric_mean, ci_half_width) = (0..first.fractions.len())
        .map(|k| mean_and_ci(&curves.iter().map(|c| c.metric_mean[k]).collect::<Vec<_>>()))
        .unzip();
    Ok(RetentionCurve {
        measure: first.measure,
        fractions: first.fractions.clone(),
        metric_mean,
        ci_half_width,
        replications: curves.len(),
    })
}

/// Box-plot summary with Tukey whiskers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub n: usize,
}

/// Linearly interpolated quantile of sorted data (Hyndman-Fan type 7).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn boxplot_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput("box plot of zero values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("box plot values must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let whisker_lo = *sorted.iter().find(|&&v| v >= lo_fence).expect("q1 is within the fence");
    let whisker_hi = *sorted.iter().rev().find(|&&v| v <= hi_fence).expect("q3 is within the fence");
    Ok(BoxStats {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median,
        q1,
        q3,
        whisker_lo: whisker_lo.min(q1),
        whisker_hi: whisker_hi.max(q3),
        n: values.len(),
    })
}

/// Box statistics of the three measures for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub entropy: BoxStats,
    pub aleatoric: BoxStats,
    pub epistemic: BoxStats,
}

impl MeasureSummary {
    pub fn of(triple: &UncertaintyTriple) -> Result<Self> {
        Ok(Self {
            entropy: boxplot_stats(&triple.total)?,
            aleatoric: boxplot_stats(&triple.aleatoric)?,
            epistemic: boxplot_stats(&triple.epistemic)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureComparison {
    pub in_dist: BoxStats,
    pub ood: BoxStats,
    /// `ood.mean - in_dist.mean`.
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodComparison {
    pub entropy: MeasureComparison,
    pub aleatoric: MeasureComparison,
    pub epistemic: MeasureComparison,
}

impl OodComparison {
    pub fn get(&self, measure: Measure) -> &MeasureComparison {
        match measure {
            Measure::Entropy => &self.entropy,
            Measure::Aleatoric => &self.aleatoric,
            Measure::Epistemic => &self.epistemic,
        }
    }
}

/// Compare uncertainty distributions on in-distribution and
/// out-of-distribution data.
pub fn ood_compare(in_dist: &UncertaintyTriple, ood: &UncertaintyTriple) -> Result<OodComparison> {
    let compare = |measure: Measure| -> Result<MeasureComparison> {
        let a = boxplot_stats(in_dist.measure(measure))?;
        let b = boxplot_stats(ood.measure(measure))?;
        Ok(MeasureComparison {
            mean_delta: b.mean - a.mean,
            in_dist: a,
            ood: b,
        })
    };
    Ok(OodComparison {
        entropy: compare(Measure::Entropy)?,
        aleatoric: compare(Measure::Aleatoric)?,
        epistemic: compare(Measure::Epistemic)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array3};

    #[test]
    fn box_stats_of_one_to_five() {
        let b = boxplot_stats(&[5.0, 3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(
            (b.median, b.mean, b.q1, b.q3, b.whisker_lo, b.whisker_hi, b.n),
            (3.0, 3.0, 2.0, 4.0, 1.0, 5.0, 5)
        );
    }

    #[test]
    fn box_stats_singleton() {
        let b = boxplot_stats(&[7.0]).unwrap();
        for v in [b.mean, b.median, b.q1, b.q3, b.whisker_lo, b.whisker_hi] {
            assert_eq!(v, 7.0);
        }
    }

    #[test]
    fn outlier_is_outside_whisker() {
        let b = boxplot_stats(&[0.0, 0.0, 0.0, 100.0]).unwrap();
        // q3 = 25 by interpolation, upper fence 62.5.
        assert_eq!(b.q3, 25.0);
        // No point lies between q3 and the fence, so the whisker stops at q3.
        assert_eq!(b.whisker_hi, 25.0);
        assert_eq!(b.whisker_lo, 0.0);
        assert!(matches!(boxplot_stats(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn retained_counts() {
        assert_eq!(retained_count(0.15, 20), 3);
        assert_eq!(retained_count(0.05, 20), 1);
        assert_eq!(retained_count(1.0, 7), 7);
        assert_eq!(retained_count(0.5, 7), 4);
        assert_eq!(retained_count(0.01, 10), 1);
    }

    #[test]
    fn ties_broken_by_index() {
        assert_eq!(retention_order(&[0.3, 0.1, 0.3, 0.1]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn single_replication_has_zero_width() {
        assert_eq!(mean_and_ci(&[0.4]), (0.4, 0.0));
        let (m, ci) = mean_and_ci(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_abs_diff_eq!(ci, 1.96 * 2f64.sqrt() / 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn perfect_predictor_curve_is_flat() {
        let p = McPredictions::new(
            array![[[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]], [[0.8, 0.2], [0.3, 0.7], [0.7, 0.3]]],
            Task::Multiclass,
        )
        .unwrap();
        let l = LabelSet::multiclass(vec![0, 1, 0], 2).unwrap();
        let c = retention_curve(&p, &l, Measure::Entropy, &default_fractions(), 5, 3).unwrap();
        assert!(c.metric_mean.iter().all(|&v| v == 1.0));
        assert!(c.ci_half_width.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn discarding_uncertain_errors_raises_accuracy() {
        // Items 2 and 3 are wrong and have the highest entropy.
        let p = McPredictions::new(
            array![[[0.95, 0.05], [0.1, 0.9], [0.45, 0.55], [0.55, 0.45]]],
            Task::Multiclass,
        )
        .unwrap();
        let l = LabelSet::multiclass(vec![0, 1, 0, 1], 2).unwrap();
        let c = retention_curve(&p, &l, Measure::Entropy, &[0.5, 1.0], 1, 0).unwrap();
        assert_eq!(c.metric_mean, vec![1.0, 0.5]);
        assert_eq!(c.ci_half_width, vec![0.0, 0.0]);
    }

    #[test]
    fn invalid_inputs() {
        let p = McPredictions::new(Array3::from_elem((2, 3, 2), 0.5), Task::Multiclass).unwrap();
        let l = LabelSet::multiclass(vec![0, 1, 0], 2).unwrap();
        assert!(retention_curve(&p, &l, Measure::Entropy, &[0.5, 0.2], 2, 0).is_err());
        assert!(retention_curve(&p, &l, Measure::Entropy, &[0.0, 0.5], 2, 0).is_err());
        assert!(retention_curve(&p, &l, Measure::Entropy, &[0.5], 0, 0).is_err());
        let short = LabelSet::multiclass(vec![0, 1], 2).unwrap();
        assert!(matches!(
            retention_curve(&p, &short, Measure::Entropy, &[1.0], 1, 0),
            Err(Error::Shape(_))
        ));
        let empty = McPredictions::new(Array3::from_elem((1, 0, 2), 0.5), Task::Multiclass).unwrap();
        let none = LabelSet::multiclass(vec![], 2).unwrap();
        assert!(matches!(
            retention_curve(&empty, &none, Measure::Entropy, &[1.0], 1, 0),
            Err(Error::EmptyRetained(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let c = RetentionCurve {
            measure: Measure::Aleatoric,
            fractions: vec![0.5, 1.0],
            metric_mean: vec![0.75, 0.5],
            ci_half_width: vec![0.0, 0.125],
            replications: 3,
        };
        assert_eq!(
            curves_to_csv(&[c]),
            "measure,fraction,metric_mean,ci_half_width,replications\n\
             aleatoric,0.5,0.75,0,3\naleatoric,1,0.5,0.125,3\n"
        );
    }

    #[test]
    fn ood_deltas() {
        let a = UncertaintyTriple::from_parts(vec![1.0, 2.0, 3.0], vec![0.5, 1.0, 1.5]);
        let same = ood_compare(&a, &a).unwrap();
        for m in Measure::ALL {
            assert_eq!(same.get(m).mean_delta, 0.0);
        }
        let shifted = UncertaintyTriple::from_parts(vec![2.0, 3.0, 4.0], vec![0.5, 1.0, 1.5]);
        let cmp = ood_compare(&a, &shifted).unwrap();
        assert_eq!(cmp.entropy.mean_delta, 1.0);
        assert_eq!(cmp.aleatoric.mean_delta, 0.0);
        assert_eq!(cmp.epistemic.mean_delta, 1.0);
        assert!(ood_compare(&a, &UncertaintyTriple::default()).is_err());
    }

    #[test]
    fn fold_average() {
        let mk = |v: f64| RetentionCurve {
            measure: Measure::Entropy,
            fractions: vec![1.0],
            metric_mean: vec![v],
            ci_half_width: vec![0.0],
            replications: 20,
        };
        let avg = average_fold_curves(&[mk(0.5), mk(0.7)]).unwrap();
        assert_abs_diff_eq!(avg.metric_mean[0], 0.6, epsilon = 1e-15);
        assert_eq!(avg.replications, 2);
    }
}
