//! Negative evidence lower bound: data negative log-likelihood plus the
//! scaled KL divergence of every variational layer.

use ndarray::{Array2, Zip};
use rand::Rng;

use super::layers::{sigmoid, softplus};
use super::net::{softmax, NetNoise, ToyNet};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor_io::Task;

/// Batch-averaged negative log-likelihood and its gradient w.r.t. logits.
///
/// Multi-class uses softmax cross-entropy against (possibly soft) target
/// rows; multi-label sums per-class sigmoid cross-entropy.
pub fn nll(logits: &Array2<f64>, targets: &Array2<f64>, task: Task) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != targets.dim() {
        return Err(Error::Shape(format!(
            "logits {:?} and targets {:?} differ",
            logits.dim(),
            targets.dim()
        )));
    }
    let batch = logits.nrows() as f64;
    match task {
        Task::Multiclass => {
            let mut loss = 0.0;
            for (z, y) in logits.rows().into_iter().zip(targets.rows()) {
                let max = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
                loss += z.iter().zip(y).map(|(&zi, &yi)| yi * (lse - zi)).sum::<f64>();
            }
            let grad = (softmax(logits) - targets) / batch;
            Ok((loss / batch, grad))
        }
        Task::Multilabel => {
            let loss = Zip::from(logits)
                .and(targets)
                .fold(0.0, |acc, &z, &y| acc + softplus(z) - y * z);
            let grad = Zip::from(logits)
                .and(targets)
                .map_collect(|&z, &y| (sigmoid(z) - y) / batch);
            Ok((loss / batch, grad))
        }
    }
}

/// Loss value, its two parts and the gradient for every parameter tensor.
#[derive(Debug, Clone)]
pub struct ElboLoss {
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub kl_scale: f64,
    pub grads: Vec<Vec<f64>>,
}

/// ELBO loss with explicit noise, one entry of `noises` per Monte-Carlo
/// sample. The likelihood term and its gradient are averaged over samples.
pub fn elbo_loss_with_noise(
    net: &ToyNet,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    kl_scale: f64,
    noises: &[NetNoise],
) -> Result<ElboLoss> {
    if x.nrows() == 0 {
        return Err(Error::EmptyInput("loss over an empty batch".into()));
    }
    if noises.is_empty() {
        return Err(Error::Config("need at least one Monte-Carlo sample".into()));
    }
    let mut grads: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut nll_sum = 0.0;
    let samples = noises.len() as f64;
    for noise in noises {
        let tape = net.forward(x, noise)?;
        let (value, grad_logits) = nll(&tape.logits, targets, net.task)?;
        nll_sum += value;
        for (acc, g) in grads.iter_mut().zip(net.backward(&tape, noise, &grad_logits)?) {
            acc.iter_mut().zip(g).for_each(|(a, v)| *a += v / samples);
        }
    }
    let kl = net.kl();
    for (acc, g) in grads.iter_mut().zip(net.kl_grad()) {
        acc.iter_mut().zip(g).for_each(|(a, v)| *a += kl_scale * v);
    }
    let nll_mean = nll_sum / samples;
    let loss = nll_mean + kl_scale * kl;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss is {loss}")));
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient has a non-finite entry".into()));
    }
    Ok(ElboLoss {
        loss,
        nll: nll_mean,
        kl,
        kl_scale,
        grads,
    })
}

/// ELBO loss drawing `cfg.mc_train_samples` noise samples from `rng`.
/// Without an explicit `kl_scale` the KL term is divided by the batch size.
pub fn elbo_loss(
    net: &ToyNet,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<ElboLoss> {
    let kl_scale = cfg.kl_scale.unwrap_or(1.0 / x.nrows().max(1) as f64);
    let noises: Vec<NetNoise> = (0..cfg.mc_train_samples.max(1))
        .map(|_| net.sample_noise(x.nrows(), rng))
        .collect();
    elbo_loss_with_noise(net, x, targets, kl_scale, &noises)
}
