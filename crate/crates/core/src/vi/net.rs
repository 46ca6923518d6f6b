//! Small feed-forward networks assembled from [`Layer`]s.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, DenseLayer, DropoutDense, Layer, LayerNoise, VariationalDense};
use crate::error::{Error, Result};
use crate::tensor_io::Task;

/// Hidden layer followed by a nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub layer: Layer,
    pub activation: Activation,
}

/// Backbone of hidden blocks plus a linear classification head producing
/// logits. Softmax or sigmoid is applied by the loss and by prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    pub backbone: Vec<Block>,
    pub head: Layer,
    pub task: Task,
}

/// Which stochastic layer family a network is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Deterministic,
    Flipout,
    /// Deterministic first layer, dropout before every later layer.
    Dropout,
}

/// Noise for every layer of one forward pass, backbone first, head last.
pub type NetNoise = Vec<LayerNoise>;

/// Intermediate values of a forward pass needed by the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input of every layer, head input last.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of every backbone block.
    pre: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

/// Which parameters an optimizer may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainScope {
    All,
    HeadOnly,
}

impl ToyNet {
    pub fn new(backbone: Vec<Block>, head: Layer, task: Task) -> Result<Self> {
        let net = Self {
            backbone,
            head,
            task,
        };
        net.check_dims()?;
        Ok(net)
    }

    /// Multilayer perceptron with `dims = [inputs, hidden.., classes]`.
    pub fn mlp(
        kind: NetKind,
        dims: &[usize],
        activation: Activation,
        task: Task,
        dropout_rate: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::DimMismatch("an MLP needs at least input and output dims".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, pair) in dims.windows(2).enumerate() {
            let (inputs, outputs) = (pair[0], pair[1]);
            let layer = match kind {
                NetKind::Deterministic => Layer::Dense(DenseLayer::random(inputs, outputs, rng)),
                NetKind::Flipout => {
                    Layer::Flipout(VariationalDense::random(inputs, outputs, 1.0, rng))
                }
                NetKind::Dropout if i == 0 => Layer::Dense(DenseLayer::random(inputs, outputs, rng)),
                NetKind::Dropout => Layer::Dropout(DropoutDense::new(
                    DenseLayer::random(inputs, outputs, rng),
                    dropout_rate,
                )?),
            };
            layers.push(layer);
        }
        let head = layers.pop().expect("at least one layer");
        let backbone = layers
            .into_iter()
            .map(|layer| Block { layer, activation })
            .collect();
        Self::new(backbone, head, task)
    }

    fn check_dims(&self) -> Result<()> {
        let mut prev: Option<usize> = None;
        for layer in self.layers() {
            let (i, o) = layer.dims();
            if let Some(p) = prev {
                if p != i {
                    return Err(Error::DimMismatch(format!(
                        "layer expects {i} inputs but previous layer emits {p}"
                    )));
                }
            }
            prev = Some(o);
        }
        Ok(())
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.backbone.iter().map(|b| &b.layer).chain(std::iter::once(&self.head))
    }

    pub fn input_dim(&self) -> usize {
        self.layers().next().expect("head always exists").dims().0
    }

    pub fn classes(&self) -> usize {
        self.head.dims().1
    }

    /// Output width of the backbone (the head's input width).
    pub fn feature_dim(&self) -> usize {
        self.head.dims().0
    }

    pub fn is_stochastic(&self) -> bool {
        self.layers().any(Layer::is_stochastic)
    }

    pub fn kl(&self) -> f64 {
        self.layers().map(Layer::kl).sum()
    }

    /// All parameter tensors, layer by layer, head last.
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.backbone {
            out.extend(b.layer.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    /// Per-tensor trainability flags aligned with [`params`](Self::params).
    pub fn trainable_mask(&self, scope: TrainScope) -> Vec<bool> {
        let backbone = self.backbone.iter().map(|b| b.layer.params().len()).sum();
        let head = self.head.params().len();
        let backbone_flag = scope == TrainScope::All;
        std::iter::repeat_n(backbone_flag, backbone)
            .chain(std::iter::repeat_n(true, head))
            .collect()
    }

    pub fn kl_grad(&self) -> Vec<Vec<f64>> {
        self.layers().flat_map(Layer::kl_grad).collect()
    }

    pub fn sample_noise(&self, batch: usize, rng: &mut impl Rng) -> NetNoise {
        self.layers().map(|l| l.sample_noise(batch, rng)).collect()
    }

    pub fn forward(&self, x: &Array2<f64>, noise: &[LayerNoise]) -> Result<Tape> {
        if noise.len() != self.backbone.len() + 1 {
            return Err(Error::Shape("noise does not cover every layer".into()));
        }
        let mut inputs = Vec::with_capacity(noise.len());
        let mut pre = Vec::with_capacity(self.backbone.len());
        let mut h = x.clone();
        for (block, n) in self.backbone.iter().zip(noise) {
            let z = block.layer.forward(&h, n)?;
            let next = block.activation.apply(&z);
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        let logits = self.head.forward(&h, &noise[self.backbone.len()])?;
        inputs.push(h);
        Ok(Tape {
            inputs,
            pre,
            logits,
        })
    }

    /// Reverse-mode pass from a logit gradient to every parameter gradient.
    pub fn backward(
        &self,
        tape: &Tape,
        noise: &[LayerNoise],
        grad_logits: &Array2<f64>,
    ) -> Result<Vec<Vec<f64>>> {
        let nb = self.backbone.len();
        let (mut grad, head_grads) = self.head.backward(&tape.inputs[nb], &noise[nb], grad_logits)?;
        let mut per_layer = vec![head_grads];
        for i in (0..nb).rev() {
            let block = &self.backbone[i];
            block.activation.backprop(&tape.pre[i], &mut grad);
            let (dx, g) = block.layer.backward(&tape.inputs[i], &noise[i], &grad)?;
            per_layer.push(g);
            grad = dx;
        }
        per_layer.reverse();
        Ok(per_layer.into_iter().flatten().collect())
    }

    /// Logits of one stochastic pass with freshly drawn noise.
    pub fn sample_logits(&self, x: &Array2<f64>, rng: &mut impl Rng) -> Result<Array2<f64>> {
        let noise = self.sample_noise(x.nrows(), rng);
        Ok(self.forward(x, &noise)?.logits)
    }
}

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Probabilities for the task: softmax rows or elementwise sigmoid.
pub fn probabilities(logits: &Array2<f64>, task: Task) -> Array2<f64> {
    match task {
        Task::Multiclass => softmax(logits),
        Task::Multilabel => logits.mapv(super::layers::sigmoid),
    }
}
