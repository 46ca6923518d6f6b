//! Python bindings for the uncertainty toolkit.

use std::collections::HashMap;

use bayes_uq::calibration::{self, BoxStats, RetentionCurve};
use bayes_uq::tensor_io::{read_npy, write_npy, LabelSet, McPredictions, Task, TensorData, TensorFile};
use bayes_uq::uncertainty::{self, Measure, UncertaintyTriple};
use bayes_uq::{metrics, Error};
use ndarray::{Array2, Array3};
use pyo3::exceptions::{PyValueError, PyIOError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_task(task: &str) -> PyResult<Task> {
    match task {
        "multiclass" => Ok(Task::Multiclass),
        "multilabel" => Ok(Task::Multilabel),
        other => Err(PyValueError::new_err(format!("unknown task {other:?}"))),
    }
}

fn parse_measure(measure: &str) -> PyResult<Measure> {
    Measure::ALL
        .into_iter()
        .find(|m| m.as_str() == measure)
        .ok_or_else(|| PyValueError::new_err(format!("unknown measure {measure:?}")))
}

/// Monte-Carlo class probabilities `[M][N][C]`.
#[pyclass(name = "McPredictions", frozen)]
struct PyMcPredictions {
    inner: McPredictions,
}

#[pymethods]
impl PyMcPredictions {
    #[new]
    fn new(probs: Vec<Vec<Vec<f64>>>, task: &str) -> PyResult<Self> {
        let task = parse_task(task)?;
        let m = probs.len();
        let n = probs.first().map_or(0, Vec::len);
        let c = probs.first().and_then(|s| s.first()).map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(m * n * c);
        for sample in &probs {
            if sample.len() != n {
                return Err(PyValueError::new_err("ragged item axis"));
            }
            for row in sample {
                if row.len() != c {
                    return Err(PyValueError::new_err("ragged class axis"));
                }
                flat.extend_from_slice(row);
            }
        }
        let arr = Array3::from_shape_vec((m, n, c), flat)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self {
            inner: McPredictions::new(arr, task).map_err(to_py)?,
        })
    }

    /// Load an `[M, N, C]` NPY file.
    #[staticmethod]
    fn load(path: &str, task: &str) -> PyResult<Self> {
        let inner = bayes_uq::tensor_io::load_predictions(path.as_ref(), parse_task(task)?)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.inner.probs().dim()
    }

    #[getter]
    fn task(&self) -> String {
        self.inner.task().to_string()
    }

    fn mean_probabilities(&self) -> Vec<Vec<f64>> {
        uncertainty::mean_probabilities(&self.inner)
            .probs
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect()
    }

    /// Per-item uncertainty triple, dispatched on the task.
    fn decompose(&self) -> PyUncertaintyTriple {
        PyUncertaintyTriple {
            inner: uncertainty::decompose(&self.inner),
        }
    }

    fn __repr__(&self) -> String {
        let (m, n, c) = self.shape();
        format!("McPredictions(M={m}, N={n}, C={c}, task={})", self.inner.task())
    }
}

#[pyclass(name = "UncertaintyTriple", frozen)]
struct PyUncertaintyTriple {
    inner: UncertaintyTriple,
}

#[pymethods]
impl PyUncertaintyTriple {
    #[getter]
    fn total(&self) -> Vec<f64> {
        self.inner.total.clone()
    }

    #[getter]
    fn aleatoric(&self) -> Vec<f64> {
        self.inner.aleatoric.clone()
    }

    #[getter]
    fn epistemic(&self) -> Vec<f64> {
        self.inner.epistemic.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn labels_from(task: Task, labels: Vec<Vec<i64>>, classes: usize) -> PyResult<LabelSet> {
    let n = labels.len();
    let tensor = match task {
        Task::Multiclass => {
            let flat: Vec<i64> = labels.into_iter().flatten().collect();
            if flat.len() != n {
                return Err(PyValueError::new_err("multi-class labels need one id per item"));
            }
            TensorFile::from_i64(vec![n], flat)
        }
        Task::Multilabel => TensorFile::from_i64(vec![n, classes], labels.into_iter().flatten().collect()),
    }
    .map_err(to_py)?;
    LabelSet::from_tensor(&tensor, task, n, classes).map_err(to_py)
}

fn box_dict(b: &BoxStats) -> HashMap<&'static str, f64> {
    HashMap::from([
        ("mean", b.mean),
        ("median", b.median),
        ("q1", b.q1),
        ("q3", b.q3),
        ("whisker_lo", b.whisker_lo),
        ("whisker_hi", b.whisker_hi),
        ("n", b.n as f64),
    ])
}

#[pyfunction]
fn binary_entropy(p: f64) -> PyResult<f64> {
    uncertainty::binary_entropy(p).map_err(to_py)
}

#[pyfunction]
fn decompose_multiclass(preds: &PyMcPredictions) -> PyResult<PyUncertaintyTriple> {
    let inner = uncertainty::decompose_multiclass(&preds.inner).map_err(to_py)?;
    Ok(PyUncertaintyTriple { inner })
}

#[pyfunction]
fn decompose_multilabel(preds: &PyMcPredictions) -> PyResult<PyUncertaintyTriple> {
    let inner = uncertainty::decompose_multilabel(&preds.inner).map_err(to_py)?;
    Ok(PyUncertaintyTriple { inner })
}

#[pyfunction]
fn average_precision(scores: Vec<f64>, positives: Vec<bool>) -> PyResult<f64> {
    metrics::average_precision(&scores, &positives).map_err(to_py)
}

#[pyfunction]
fn auc(scores: Vec<f64>, positives: Vec<bool>) -> PyResult<f64> {
    metrics::auc(&scores, &positives).map_err(to_py)
}

#[pyfunction]
fn d_prime(auc: f64) -> PyResult<f64> {
    metrics::d_prime(auc).map_err(to_py)
}

/// Macro metrics as a JSON string. Multi-class labels are `[[id], ...]`,
/// multi-label labels `[[0, 1, ...], ...]`.
#[pyfunction]
fn macro_metrics_json(preds: &PyMcPredictions, labels: Vec<Vec<i64>>) -> PyResult<String> {
    let labels = labels_from(preds.inner.task(), labels, preds.inner.classes())?;
    let report = metrics::macro_metrics(&preds.inner, &labels).map_err(to_py)?;
    Ok(report.to_json())
}

#[pyfunction]
fn boxplot_stats(values: Vec<f64>) -> PyResult<HashMap<&'static str, f64>> {
    Ok(box_dict(&calibration::boxplot_stats(&values).map_err(to_py)?))
}

/// Returns `(fractions, metric_mean, ci_half_width)`.
#[pyfunction]
#[pyo3(signature = (preds, labels, measure="entropy", replications=20, seed=0, fractions=None))]
fn retention_curve(
    preds: &PyMcPredictions,
    labels: Vec<Vec<i64>>,
    measure: &str,
    replications: usize,
    seed: u64,
    fractions: Option<Vec<f64>>,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let labels = labels_from(preds.inner.task(), labels, preds.inner.classes())?;
    let fractions = fractions.unwrap_or_else(calibration::default_fractions);
    let RetentionCurve {
        fractions,
        metric_mean,
        ci_half_width,
        ..
    } = calibration::retention_curve(
        &preds.inner,
        &labels,
        parse_measure(measure)?,
        &fractions,
        replications,
        seed,
    )
    .map_err(to_py)?;
    Ok((fractions, metric_mean, ci_half_width))
}

/// Decode NPY bytes into `(descr, shape, flat values as floats)`.
#[pyfunction]
fn read_npy_bytes(data: &[u8]) -> PyResult<(String, Vec<usize>, Vec<f64>)> {
    let t = read_npy(data).map_err(to_py)?;
    let values = match t.data() {
        TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        _ => t.to_f64_vec().expect("float tensor"),
    };
    Ok((t.dtype().descr().to_string(), t.shape().to_vec(), values))
}

/// Encode a float64 tensor as NPY bytes.
#[pyfunction]
fn write_npy_f64<'py>(py: Python<'py>, shape: Vec<usize>, values: Vec<f64>) -> PyResult<Bound<'py, PyBytes>> {
    let t = TensorFile::from_f64(shape, values).map_err(to_py)?;
    Ok(PyBytes::new(py, &write_npy(&t)))
}

/// Row-major `[N, C]` mean probabilities helper used by the smoke test.
#[pyfunction]
fn softmax_rows(logits: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let n = logits.len();
    let c = logits.first().map_or(0, Vec::len);
    let arr = Array2::from_shape_vec((n, c), logits.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(bayes_uq::vi::softmax(&arr).rows().into_iter().map(|r| r.to_vec()).collect())
}

#[pymodule]
fn bayes_uq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMcPredictions>()?;
    m.add_class::<PyUncertaintyTriple>()?;
    m.add_function(wrap_pyfunction!(binary_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_multiclass, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_multilabel, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(d_prime, m)?)?;
    m.add_function(wrap_pyfunction!(macro_metrics_json, m)?)?;
    m.add_function(wrap_pyfunction!(boxplot_stats, m)?)?;
    m.add_function(wrap_pyfunction!(retention_curve, m)?)?;
    m.add_function(wrap_pyfunction!(read_npy_bytes, m)?)?;
    m.add_function(wrap_pyfunction!(write_npy_f64, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_rows, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
