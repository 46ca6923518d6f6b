//! Checkpoints: one NPY file per parameter tensor plus `manifest.json`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::layers::{Activation, DenseLayer, DropoutDense, Layer, VariationalDense};
use super::net::{Block, ToyNet};
use crate::error::{Error, Result};
use crate::tensor_io::{read_tensor, write_atomic, write_npy, Task, TensorFile};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub kind: String,
    pub inputs: usize,
    pub outputs: usize,
    /// `None` for the head.
    pub activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_sigma: Option<f64>,
    /// Tensor name to file name.
    pub tensors: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub task: Task,
    pub rng_seed: u64,
    pub layers: Vec<LayerEntry>,
}

fn tensors_of(layer: &Layer) -> Vec<(&'static str, TensorFile)> {
    let m = |a: &Array2<f64>| {
        TensorFile::from_f64(vec![a.nrows(), a.ncols()], a.iter().copied().collect()).unwrap()
    };
    let v = |a: &Array1<f64>| TensorFile::from_f64(vec![a.len()], a.to_vec()).unwrap();
    match layer {
        Layer::Dense(l) => vec![("w", m(&l.w)), ("b", v(&l.b))],
        Layer::Dropout(l) => vec![("w", m(&l.w)), ("b", v(&l.b))],
        Layer::Flipout(l) => vec![
            ("mu", m(&l.mu)),
            ("rho", m(&l.rho)),
            ("bias_mu", v(&l.bias_mu)),
            ("bias_rho", v(&l.bias_rho)),
            ("prior_mu", m(&l.prior_mu)),
            ("prior_bias_mu", v(&l.prior_bias_mu)),
        ],
    }
}

pub fn save_checkpoint(net: &ToyNet, dir: &Path, rng_seed: u64) -> Result<CheckpointManifest> {
    std::fs::create_dir_all(dir)?;
    let activations = net
        .backbone
        .iter()
        .map(|b| Some(b.activation))
        .chain(std::iter::once(None));
    let mut layers = Vec::new();
    for (i, (layer, activation)) in net.layers().zip(activations).enumerate() {
        let mut tensors = BTreeMap::new();
        for (name, tensor) in tensors_of(layer) {
            let file = format!("layer{i}_{name}.npy");
            write_atomic(&dir.join(&file), &write_npy(&tensor))?;
            tensors.insert(name.to_string(), file);
        }
        let (inputs, outputs) = layer.dims();
        layers.push(LayerEntry {
            kind: layer.kind().to_string(),
            inputs,
            outputs,
            activation,
            dropout_rate: match layer {
                Layer::Dropout(l) => Some(l.rate),
                _ => None,
            },
            prior_sigma: match layer {
                Layer::Flipout(l) => Some(l.prior_sigma),
                _ => None,
            },
            tensors,
        });
    }
    let manifest = CheckpointManifest {
        task: net.task,
        rng_seed,
        layers,
    };
    write_atomic(
        &dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}

fn load_matrix(dir: &Path, entry: &LayerEntry, name: &str) -> Result<Array2<f64>> {
    let t = load_named(dir, entry, name)?;
    let data = t.to_f64_vec().ok_or_else(|| Error::Shape(format!("{name} must be float")))?;
    Array2::from_shape_vec((entry.inputs, entry.outputs), data)
        .map_err(|e| Error::Shape(format!("{name}: {e}")))
}

fn load_vector(dir: &Path, entry: &LayerEntry, name: &str) -> Result<Array1<f64>> {
    let t = load_named(dir, entry, name)?;
    if t.shape() != [entry.outputs] {
        return Err(Error::Shape(format!("{name} has shape {:?}", t.shape())));
    }
    Ok(Array1::from(t.to_f64_vec().ok_or_else(|| Error::Shape(format!("{name} must be float")))?))
}

fn load_named(dir: &Path, entry: &LayerEntry, name: &str) -> Result<TensorFile> {
    let file = entry
        .tensors
        .get(name)
        .ok_or_else(|| Error::Config(format!("{} layer lacks tensor {name}", entry.kind)))?;
    read_tensor(&dir.join(file))
}

/// Load a checkpoint written by [`save_checkpoint`]; returns the network and
/// the recorded seed.
pub fn load_checkpoint(dir: &Path) -> Result<(ToyNet, u64)> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let layer = match entry.kind.as_str() {
            "dense" => Layer::Dense(DenseLayer {
                w: load_matrix(dir, entry, "w")?,
                b: load_vector(dir, entry, "b")?,
            }),
            "dropout" => Layer::Dropout(DropoutDense::new(
                DenseLayer {
                    w: load_matrix(dir, entry, "w")?,
                    b: load_vector(dir, entry, "b")?,
                },
                entry.dropout_rate.unwrap_or(0.0),
            )?),
            "flipout" => Layer::Flipout(VariationalDense {
                mu: load_matrix(dir, entry, "mu")?,
                rho: load_matrix(dir, entry, "rho")?,
                bias_mu: load_vector(dir, entry, "bias_mu")?,
                bias_rho: load_vector(dir, entry, "bias_rho")?,
                prior_mu: load_matrix(dir, entry, "prior_mu")?,
                prior_bias_mu: load_vector(dir, entry, "prior_bias_mu")?,
                prior_sigma: entry
                    .prior_sigma
                    .ok_or_else(|| Error::Config("flipout layer lacks prior_sigma".into()))?,
            }),
            other => return Err(Error::Config(format!("unknown layer kind {other:?}"))),
        };
        layers.push((layer, entry.activation));
    }
    let (head, head_act) = layers
        .pop()
        .ok_or_else(|| Error::Config("checkpoint has no layers".into()))?;
    if head_act.is_some() {
        return Err(Error::Config("the last layer must be the head".into()));
    }
    let backbone = layers
        .into_iter()
        .map(|(layer, act)| {
            let activation =
                act.ok_or_else(|| Error::Config("backbone layer lacks an activation".into()))?;
            Ok(Block { layer, activation })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ToyNet::new(backbone, head, manifest.task)?, manifest.rng_seed))
}
