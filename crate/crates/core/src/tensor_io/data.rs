//! Validated prediction and label containers.

use std::fmt;
use std::path::Path;

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::npy::{read_npy, TensorData, TensorFile};
use crate::error::{Error, Result};

/// Slack allowed on the [0, 1] range check.
pub const RANGE_SLACK: f64 = 1e-6;
/// Maximum deviation of a multi-class probability row from 1.
pub const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Mutually exclusive classes, softmax outputs.
    Multiclass,
    /// Independent binary classes, sigmoid outputs.
    Multilabel,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Multiclass => "multiclass",
            Task::Multilabel => "multilabel",
        })
    }
}

impl Task {
    pub(crate) fn expect(self, expected: Task) -> Result<()> {
        if self == expected {
            Ok(())
        } else {
            Err(Error::TaskMismatch {
                expected: expected.to_string(),
                found: self.to_string(),
            })
        }
    }
}

/// Class probabilities from `M` stochastic forward passes over `N` items,
/// laid out as `[M, N, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct McPredictions {
    probs: Array3<f64>,
    task: Task,
}

impl McPredictions {
    pub fn new(probs: Array3<f64>, task: Task) -> Result<Self> {
        let (m, _n, c) = probs.dim();
        if m < 1 {
            return Err(Error::Shape("need at least one Monte-Carlo sample".into()));
        }
        if c < 2 && task == Task::Multiclass {
            return Err(Error::Shape(format!("multi-class predictions need C >= 2, got {c}")));
        }
        if c < 1 {
            return Err(Error::Shape("need at least one class".into()));
        }
        for (index, &value) in probs.iter().enumerate() {
            if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&value) {
                return Err(Error::Range { index, value });
            }
        }
        if task == Task::Multiclass {
            let (_, n, _) = probs.dim();
            for sample in 0..m {
                for item in 0..n {
                    let sum: f64 = probs.slice(s![sample, item, ..]).sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        return Err(Error::RowSum { sample, item, sum });
                    }
                }
            }
        }
        Ok(Self { probs, task })
    }

    /// Build from a rank-3 float tensor, widening f32 to f64.
    pub fn from_tensor(tensor: &TensorFile, task: Task) -> Result<Self> {
        let shape = tensor.shape();
        if shape.len() != 3 {
            return Err(Error::Shape(format!(
                "predictions must be rank 3 [M, N, C], got shape {shape:?}"
            )));
        }
        let data = tensor
            .to_f64_vec()
            .ok_or_else(|| Error::Shape("predictions must be a float tensor".into()))?;
        let probs = Array3::from_shape_vec((shape[0], shape[1], shape[2]), data)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(probs, task)
    }

    pub fn to_tensor(&self) -> TensorFile {
        let (m, n, c) = self.probs.dim();
        TensorFile::from_f64(vec![m, n, c], self.probs.iter().copied().collect())
            .expect("shape matches by construction")
    }

    pub fn probs(&self) -> &Array3<f64> {
        &self.probs
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn samples(&self) -> usize {
        self.probs.dim().0
    }

    pub fn items(&self) -> usize {
        self.probs.dim().1
    }

    pub fn classes(&self) -> usize {
        self.probs.dim().2
    }

    /// New predictions drawn from the given sample indices (repeats allowed).
    pub fn select_samples(&self, indices: &[usize]) -> Self {
        Self {
            probs: self.probs.select(Axis(0), indices),
            task: self.task,
        }
    }

    /// New predictions restricted to the given items, in the given order.
    pub fn select_items(&self, indices: &[usize]) -> Self {
        Self {
            probs: self.probs.select(Axis(1), indices),
            task: self.task,
        }
    }
}

/// Ground truth for `N` items.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelSet {
    /// One class id per item.
    Multiclass { labels: Vec<usize>, classes: usize },
    /// `[N, C]` matrix of 0/1 flags.
    Multilabel(Array2<u8>),
}

impl LabelSet {
    pub fn multiclass(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Index {
                index,
                value: value as i64,
                classes,
            });
        }
        Ok(LabelSet::Multiclass { labels, classes })
    }

    pub fn multilabel(matrix: Array2<u8>) -> Result<Self> {
        if let Some((index, &value)) = matrix.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::Binary {
                index,
                value: value as i64,
            });
        }
        Ok(LabelSet::Multilabel(matrix))
    }

    /// Validate an i64 tensor as labels for `n` items over `c` classes.
    pub fn from_tensor(tensor: &TensorFile, task: Task, n: usize, c: usize) -> Result<Self> {
        let TensorData::I64(values) = tensor.data() else {
            return Err(Error::Shape("labels must be an <i8 integer tensor".into()));
        };
        let shape = tensor.shape();
        match task {
            Task::Multiclass => {
                if shape != [n] {
                    return Err(Error::Shape(format!(
                        "multi-class labels must have shape [{n}], got {shape:?}"
                    )));
                }
                let labels = values
                    .iter()
                    .enumerate()
                    .map(|(index, &value)| {
                        if value < 0 || value as u64 >= c as u64 {
                            Err(Error::Index {
                                index,
                                value,
                                classes: c,
                            })
                        } else {
                            Ok(value as usize)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(LabelSet::Multiclass { labels, classes: c })
            }
            Task::Multilabel => {
                if shape != [n, c] {
                    return Err(Error::Shape(format!(
                        "multi-label labels must have shape [{n}, {c}], got {shape:?}"
                    )));
                }
                let flags = values
                    .iter()
                    .enumerate()
                    .map(|(index, &value)| match value {
                        0 | 1 => Ok(value as u8),
                        _ => Err(Error::Binary { index, value }),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let matrix = Array2::from_shape_vec((n, c), flags)
                    .map_err(|e| Error::Shape(e.to_string()))?;
                Ok(LabelSet::Multilabel(matrix))
            }
        }
    }

    pub fn to_tensor(&self) -> TensorFile {
        match self {
            LabelSet::Multiclass { labels, .. } => TensorFile::from_i64(
                vec![labels.len()],
                labels.iter().map(|&l| l as i64).collect(),
            ),
            LabelSet::Multilabel(m) => TensorFile::from_i64(
                vec![m.nrows(), m.ncols()],
                m.iter().map(|&v| i64::from(v)).collect(),
            ),
        }
        .expect("shape matches by construction")
    }

    pub fn task(&self) -> Task {
        match self {
            LabelSet::Multiclass { .. } => Task::Multiclass,
            LabelSet::Multilabel(_) => Task::Multilabel,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            LabelSet::Multiclass { labels, .. } => labels.len(),
            LabelSet::Multilabel(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        match self {
            LabelSet::Multiclass { classes, .. } => *classes,
            LabelSet::Multilabel(m) => m.ncols(),
        }
    }

    /// `[N, C]` indicator matrix; one-hot rows for multi-class labels.
    pub fn indicator(&self) -> Array2<u8> {
        match self {
            LabelSet::Multiclass { labels, classes } => {
                let mut m = Array2::zeros((labels.len(), *classes));
                for (i, &l) in labels.iter().enumerate() {
                    m[[i, l]] = 1;
                }
                m
            }
            LabelSet::Multilabel(m) => m.clone(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        match self {
            LabelSet::Multiclass { labels, classes } => LabelSet::Multiclass {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
            LabelSet::Multilabel(m) => LabelSet::Multilabel(m.select(Axis(0), indices)),
        }
    }

    /// Check that these labels pair with predictions of the given shape.
    pub fn check_pairing(&self, preds: &McPredictions) -> Result<()> {
        self.task().expect(preds.task())?;
        if self.len() != preds.items() || self.classes() != preds.classes() {
            return Err(Error::Shape(format!(
                "labels cover {} items x {} classes, predictions {} x {}",
                self.len(),
                self.classes(),
                preds.items(),
                preds.classes()
            )));
        }
        Ok(())
    }
}

pub fn read_tensor(path: &Path) -> Result<TensorFile> {
    let bytes = std::fs::read(path)?;
    read_npy(&bytes)
}

/// Read and validate an `[M, N, C]` prediction tensor.
pub fn load_predictions(path: &Path, task: Task) -> Result<McPredictions> {
    McPredictions::from_tensor(&read_tensor(path)?, task)
}

/// Read and validate labels for `n` items over `c` classes.
pub fn load_labels(path: &Path, task: Task, n: usize, c: usize) -> Result<LabelSet> {
    LabelSet::from_tensor(&read_tensor(path)?, task, n, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn t3(shape: [usize; 3], data: Vec<f64>) -> TensorFile {
        TensorFile::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn accepts_single_normalized_row() {
        let p = McPredictions::from_tensor(&t3([1, 1, 2], vec![0.6, 0.4]), Task::Multiclass).unwrap();
        assert_eq!((p.samples(), p.items(), p.classes()), (1, 1, 2));
    }

    #[test]
    fn multiclass_row_sum_enforced() {
        let r = McPredictions::from_tensor(&t3([1, 1, 2], vec![0.5, 0.3]), Task::Multiclass);
        assert!(matches!(r, Err(Error::RowSum { .. })));
    }

    #[test]
    fn multilabel_rows_unconstrained() {
        let p = McPredictions::from_tensor(&t3([1, 1, 2], vec![0.6, 0.9]), Task::Multilabel);
        assert!(p.is_ok());
    }

    #[test]
    fn range_checked_without_clamping() {
        let r = McPredictions::from_tensor(&t3([1, 1, 2], vec![1.2, -0.2]), Task::Multilabel);
        assert!(matches!(r, Err(Error::Range { index: 0, .. })));
        let r = McPredictions::from_tensor(&t3([1, 1, 2], vec![f64::NAN, 0.5]), Task::Multilabel);
        assert!(matches!(r, Err(Error::Range { .. })));
        // Values within the slack are kept as-is.
        let p = McPredictions::from_tensor(&t3([1, 1, 2], vec![1.0 + 5e-7, 0.0]), Task::Multilabel)
            .unwrap();
        assert_eq!(p.probs()[[0, 0, 0]], 1.0 + 5e-7);
    }

    #[test]
    fn rank_must_be_three() {
        let t = TensorFile::from_f64(vec![2], vec![0.5, 0.5]).unwrap();
        assert!(matches!(McPredictions::from_tensor(&t, Task::Multiclass), Err(Error::Shape(_))));
    }

    #[test]
    fn f32_is_widened() {
        let t = TensorFile::new(vec![1, 1, 2], TensorData::F32(vec![0.25, 0.75])).unwrap();
        let p = McPredictions::from_tensor(&t, Task::Multiclass).unwrap();
        assert_eq!(p.probs()[[0, 0, 1]], 0.75);
    }

    #[test]
    fn multiclass_labels() {
        let t = TensorFile::from_i64(vec![2], vec![0, 1]).unwrap();
        let l = LabelSet::from_tensor(&t, Task::Multiclass, 2, 2).unwrap();
        assert_eq!(l, LabelSet::Multiclass { labels: vec![0, 1], classes: 2 });

        let bad = TensorFile::from_i64(vec![2], vec![0, 5]).unwrap();
        assert!(matches!(
            LabelSet::from_tensor(&bad, Task::Multiclass, 2, 2),
            Err(Error::Index { value: 5, .. })
        ));
        let neg = TensorFile::from_i64(vec![1], vec![-1]).unwrap();
        assert!(matches!(
            LabelSet::from_tensor(&neg, Task::Multiclass, 1, 2),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn multilabel_labels() {
        let t = TensorFile::from_i64(vec![1, 2], vec![1, 1]).unwrap();
        let l = LabelSet::from_tensor(&t, Task::Multilabel, 1, 2).unwrap();
        assert_eq!(l, LabelSet::Multilabel(array![[1u8, 1]]));

        let bad = TensorFile::from_i64(vec![1, 2], vec![1, 2]).unwrap();
        assert!(matches!(
            LabelSet::from_tensor(&bad, Task::Multilabel, 1, 2),
            Err(Error::Binary { value: 2, .. })
        ));
    }

    #[test]
    fn label_shape_must_match() {
        let t = TensorFile::from_i64(vec![3], vec![0, 1, 0]).unwrap();
        assert!(matches!(LabelSet::from_tensor(&t, Task::Multiclass, 2, 2), Err(Error::Shape(_))));
        let f = TensorFile::from_f64(vec![2], vec![0.0, 1.0]).unwrap();
        assert!(matches!(LabelSet::from_tensor(&f, Task::Multiclass, 2, 2), Err(Error::Shape(_))));
    }
}
