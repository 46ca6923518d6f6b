//! Entropy-based uncertainty decomposition of Monte-Carlo predictions.
//!
//! Total uncertainty is the entropy of the sample-averaged prediction,
//! aleatoric uncertainty is the average entropy of the individual samples and
//! epistemic uncertainty is their difference (the mutual information between
//! the prediction and the model parameters). All values are in nats.
//!
//! Multi-class predictions use the categorical entropy over the `C` classes.
//! Multi-label predictions treat every class as an independent Bernoulli
//! variable and sum the per-class binary entropies.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{McPredictions, Task, TensorFile};

/// Lower bound applied to the argument of `ln`.
pub const LN_FLOOR: f64 = 1e-12;

/// `p * ln p` with `0 * ln 0 = 0`.
#[inline]
fn xlnx(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * p.max(LN_FLOOR).ln()
    }
}

#[inline]
fn bernoulli_entropy(p: f64) -> f64 {
    -xlnx(p) - xlnx(1.0 - p)
}

/// Entropy of a Bernoulli(p) variable in nats.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    Ok(bernoulli_entropy(p))
}

/// Entropy of a categorical distribution in nats.
pub fn categorical_entropy(probs: &[f64]) -> f64 {
    -probs.iter().map(|&p| xlnx(p)).sum::<f64>()
}

/// Sample-averaged class probabilities, `[N, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanProbabilities {
    pub probs: Array2<f64>,
}

impl MeanProbabilities {
    pub fn items(&self) -> usize {
        self.probs.nrows()
    }

    pub fn classes(&self) -> usize {
        self.probs.ncols()
    }
}

pub fn mean_probabilities(preds: &McPredictions) -> MeanProbabilities {
    let probs = preds
        .probs()
        .mean_axis(Axis(0))
        .expect("McPredictions always holds at least one sample");
    MeanProbabilities { probs }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Predictive entropy (total uncertainty).
    Entropy,
    Aleatoric,
    Epistemic,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Entropy, Measure::Aleatoric, Measure::Epistemic];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Entropy => "entropy",
            Measure::Aleatoric => "aleatoric",
            Measure::Epistemic => "epistemic",
        }
    }
}

/// Per-item total, aleatoric and epistemic uncertainty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UncertaintyTriple {
    pub total: Vec<f64>,
    pub aleatoric: Vec<f64>,
    pub epistemic: Vec<f64>,
}

impl UncertaintyTriple {
    pub fn from_parts(total: Vec<f64>, aleatoric: Vec<f64>) -> Self {
        let epistemic = total.iter().zip(&aleatoric).map(|(t, a)| t - a).collect();
        Self {
            total,
            aleatoric,
            epistemic,
        }
    }

    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    pub fn measure(&self, measure: Measure) -> &[f64] {
        match measure {
            Measure::Entropy => &self.total,
            Measure::Aleatoric => &self.aleatoric,
            Measure::Epistemic => &self.epistemic,
        }
    }

    /// `[N, 3]` tensor with columns total, aleatoric, epistemic.
    pub fn to_tensor(&self) -> TensorFile {
        let data = (0..self.len())
            .flat_map(|i| [self.total[i], self.aleatoric[i], self.epistemic[i]])
            .collect();
        TensorFile::from_f64(vec![self.len(), 3], data).expect("three columns per item")
    }

    pub fn from_tensor(tensor: &TensorFile) -> Result<Self> {
        let shape = tensor.shape();
        if shape.len() != 2 || shape[1] != 3 {
            return Err(Error::Shape(format!("expected [N, 3] triples, got {shape:?}")));
        }
        let data = tensor
            .to_f64_vec()
            .ok_or_else(|| Error::Shape("triples must be float".into()))?;
        let column = |k: usize| data.iter().skip(k).step_by(3).copied().collect::<Vec<_>>();
        Ok(Self {
            total: column(0),
            aleatoric: column(1),
            epistemic: column(2),
        })
    }
}

/// Per-class multi-label uncertainties before summation over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PerClassUncertainty {
    /// `[N, C]` binary predictive entropy.
    pub total: Array2<f64>,
    /// `[N, C]` expected binary entropy.
    pub aleatoric: Array2<f64>,
    /// `[N, C]` difference of the two.
    pub epistemic: Array2<f64>,
}

impl PerClassUncertainty {
    pub fn summed(&self) -> UncertaintyTriple {
        let total = self.total.sum_axis(Axis(1)).to_vec();
        let aleatoric = self.aleatoric.sum_axis(Axis(1)).to_vec();
        UncertaintyTriple::from_parts(total, aleatoric)
    }

    /// `[N, C, 3]` tensor, last axis total, aleatoric, epistemic.
    pub fn to_tensor(&self) -> TensorFile {
        let (n, c) = self.total.dim();
        let mut data = Vec::with_capacity(n * c * 3);
        for i in 0..n {
            for j in 0..c {
                data.extend([self.total[[i, j]], self.aleatoric[[i, j]], self.epistemic[[i, j]]]);
            }
        }
        TensorFile::from_f64(vec![n, c, 3], data).expect("shape matches by construction")
    }
}

/// Decompose multi-class predictions.
pub fn decompose_multiclass(preds: &McPredictions) -> Result<UncertaintyTriple> {
    preds.task().expect(Task::Multiclass)?;
    let probs = preds.probs();
    let (m, n, _c) = probs.dim();
    let mean = mean_probabilities(preds);

    let mut total = Vec::with_capacity(n);
    let mut aleatoric = Vec::with_capacity(n);
    for item in 0..n {
        total.push(-mean.probs.row(item).iter().map(|&p| xlnx(p)).sum::<f64>());
        let expected: f64 = (0..m)
            .map(|s| -probs.index_axis(Axis(0), s).row(item).iter().map(|&p| xlnx(p)).sum::<f64>())
            .sum();
        aleatoric.push(expected / m as f64);
    }
    Ok(UncertaintyTriple::from_parts(total, aleatoric))
}

/// Decompose multi-label predictions, keeping the per-class terms.
pub fn decompose_multilabel_per_class(preds: &McPredictions) -> Result<PerClassUncertainty> {
    preds.task().expect(Task::Multilabel)?;
    let probs = preds.probs();
    let m = probs.dim().0;
    let mean = mean_probabilities(preds);

    let total = mean.probs.mapv(bernoulli_entropy);
    let aleatoric = probs.mapv(bernoulli_entropy).sum_axis(Axis(0)) / m as f64;
    let epistemic = &total - &aleatoric;
    Ok(PerClassUncertainty {
        total,
        aleatoric,
        epistemic,
    })
}

/// Decompose multi-label predictions into class-summed uncertainties.
pub fn decompose_multilabel(preds: &McPredictions) -> Result<UncertaintyTriple> {
    Ok(decompose_multilabel_per_class(preds)?.summed())
}

/// Dispatch on the prediction task.
pub fn decompose(preds: &McPredictions) -> UncertaintyTriple {
    match preds.task() {
        Task::Multiclass => decompose_multiclass(preds),
        Task::Multilabel => decompose_multilabel(preds),
    }
    .expect("task matches by dispatch")
}
