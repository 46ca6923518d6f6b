//! Uncertainty decomposition and calibration analysis for Monte-Carlo
//! ensembles of probabilistic classifiers, with a small variational-inference
//! engine that produces such ensembles end to end.

pub mod calibration;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod synthetic;
pub mod tensor_io;
pub mod uncertainty;
pub mod vi;

pub use error::{Error, Result};
pub use tensor_io::{LabelSet, McPredictions, Task, TensorFile};
pub use uncertainty::{Measure, UncertaintyTriple};
