//! Minibatch training with Adam, optional mixup, and frozen-backbone
//! support.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::loss::elbo_loss;
use super::net::{ToyNet, TrainScope};
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::tensor_io::{LabelSet, Task};

/// Training hyperparameters. Field names are the JSON keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mc_train_samples: usize,
    /// Weight of the KL term; `null` means one over the training-set size.
    #[serde(default)]
    pub kl_scale: Option<f64>,
    pub mixup_alpha: f64,
    pub seed: u64,
    pub dropout_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            mc_train_samples: 1,
            kl_scale: None,
            mixup_alpha: 1.0,
            seed: 0,
            dropout_rate: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.mc_train_samples == 0 {
            return bad("mc_train_samples must be positive");
        }
        if matches!(self.kl_scale, Some(s) if !(s >= 0.0 && s.is_finite())) {
            return bad("kl_scale must be non-negative");
        }
        if !(self.mixup_alpha >= 0.0 && self.mixup_alpha.is_finite()) {
            return bad("mixup_alpha must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Inputs with target rows (one-hot, multi-hot, or mixed soft targets).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub targets: Array2<f64>,
    pub task: Task,
}

impl Dataset {
    pub fn new(x: Array2<f64>, targets: Array2<f64>, task: Task) -> Result<Self> {
        if x.nrows() != targets.nrows() {
            return Err(Error::Shape(format!(
                "{} inputs but {} target rows",
                x.nrows(),
                targets.nrows()
            )));
        }
        Ok(Self { x, targets, task })
    }

    pub fn from_labels(x: Array2<f64>, labels: &LabelSet) -> Result<Self> {
        let targets = labels.indicator().mapv(f64::from);
        Self::new(x, targets, labels.task())
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn classes(&self) -> usize {
        self.targets.ncols()
    }

    /// Hard labels: arg-max class for multi-class, thresholded targets for
    /// multi-label.
    pub fn labels(&self) -> LabelSet {
        match self.task {
            Task::Multiclass => {
                let labels = self
                    .targets
                    .rows()
                    .into_iter()
                    .map(|r| {
                        r.iter()
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                                if v > best.1 {
                                    (i, v)
                                } else {
                                    best
                                }
                            })
                            .0
                    })
                    .collect();
                LabelSet::Multiclass {
                    labels,
                    classes: self.classes(),
                }
            }
            Task::Multilabel => {
                LabelSet::Multilabel(self.targets.mapv(|v| u8::from(v >= 0.5)))
            }
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), indices),
            targets: self.targets.select(Axis(0), indices),
            task: self.task,
        }
    }
}

/// Draw the mixing weight `lambda ~ Beta(alpha, alpha)`; `alpha = 0` gives 1.
pub fn sample_mixup_lambda(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::Domain(format!("mixup alpha {alpha} is negative")));
    }
    if alpha == 0.0 {
        return Ok(1.0);
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(beta.sample(rng))
}

/// Convex combination `lambda * a + (1 - lambda) * b` of inputs and targets.
pub fn mixup_with_lambda(
    x1: &Array2<f64>,
    y1: &Array2<f64>,
    x2: &Array2<f64>,
    y2: &Array2<f64>,
    lambda: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if x1.dim() != x2.dim() || y1.dim() != y2.dim() || x1.nrows() != y1.nrows() {
        return Err(Error::Shape("mixup operands differ in shape".into()));
    }
    let x = x1 * lambda + x2 * (1.0 - lambda);
    let y = y1 * lambda + y2 * (1.0 - lambda);
    Ok((x, y))
}

/// Mixed inputs and targets together with the sampled weight.
#[derive(Debug, Clone)]
pub struct Mixed {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub lambda: f64,
}

pub fn mixup(
    x1: &Array2<f64>,
    y1: &Array2<f64>,
    x2: &Array2<f64>,
    y2: &Array2<f64>,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<Mixed> {
    let lambda = sample_mixup_lambda(alpha, rng)?;
    let (x, y) = mixup_with_lambda(x1, y1, x2, y2, lambda)?;
    Ok(Mixed { x, y, lambda })
}

/// Train every parameter. Returns the mean loss of each epoch.
pub fn train(net: &mut ToyNet, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    train_scoped(net, data, cfg, TrainScope::All)
}

/// Train the parameters selected by `scope`; the rest stay bit-identical.
pub fn train_scoped(
    net: &mut ToyNet,
    data: &Dataset,
    cfg: &TrainConfig,
    scope: TrainScope,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    if data.input_dim() != net.input_dim() || data.classes() != net.classes() {
        return Err(Error::DimMismatch(format!(
            "data is {} -> {}, network is {} -> {}",
            data.input_dim(),
            data.classes(),
            net.input_dim(),
            net.classes()
        )));
    }
    data.task.expect(net.task)?;
    let cfg = TrainConfig {
        kl_scale: Some(cfg.kl_scale.unwrap_or(1.0 / data.len() as f64)),
        ..cfg.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mask = net.trainable_mask(scope);
    let mut adam = Adam::new(cfg.learning_rate, &sizes);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let (x, y) = if cfg.mixup_alpha > 0.0 {
                let mut partner: Vec<usize> = (0..chunk.len()).collect();
                partner.shuffle(&mut rng);
                let other = batch.select(&partner);
                let mixed = mixup(&batch.x, &batch.targets, &other.x, &other.targets, cfg.mixup_alpha, &mut rng)?;
                (mixed.x, mixed.y)
            } else {
                (batch.x, batch.targets)
            };
            let out = elbo_loss(net, &x, &y, &cfg, &mut rng).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}: {msg}")),
                other => other,
            })?;
            adam.step(net.params_mut(), &out.grads, &mask);
            total += out.loss;
            batches += 1;
        }
        trace.push(total / batches as f64);
    }
    Ok(trace)
}
