//! Dense layers with their stochastic forward passes and hand-written
//! backward passes.
//!
//! Every stochastic layer draws its noise into a [`LayerNoise`] first and
//! then runs a pure forward pass given that noise, so the same noise can be
//! replayed for the backward pass or pinned by tests.

use ndarray::{Array, Array1, Array2, Axis, Dimension, Zip};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest posterior standard deviation produced by initializers.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Posterior `rho` initial value for fresh variational layers.
pub const RHO_INIT: f64 = -3.0;

/// `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `sigma > 0`.
pub fn inverse_softplus(sigma: f64) -> f64 {
    if sigma > 30.0 {
        sigma
    } else {
        sigma.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => x.clone(),
            Activation::Relu => x.mapv(|v| v.max(0.0)),
            Activation::Tanh => x.mapv(f64::tanh),
        }
    }

    /// Multiply `grad` in place by the derivative at pre-activation `pre`.
    pub fn backprop(self, pre: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => Zip::from(grad).and(pre).for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => Zip::from(grad).and(pre).for_each(|g, &p| {
                let t = p.tanh();
                *g *= 1.0 - t * t;
            }),
        }
    }
}

/// Plain affine layer `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseLayer {
    /// He-style Gaussian initialization, zero bias.
    pub fn random(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let scale = (2.0 / inputs as f64).sqrt();
        let w = Array2::from_shape_simple_fn((inputs, outputs), || {
            scale * rng.sample::<f64, _>(StandardNormal)
        });
        Self {
            w,
            b: Array1::zeros(outputs),
        }
    }
}

/// Gaussian mean-field posterior over the weights and biases of a dense
/// layer, with a Gaussian prior. Standard deviations are `softplus(rho)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalDense {
    pub mu: Array2<f64>,
    pub rho: Array2<f64>,
    pub bias_mu: Array1<f64>,
    pub bias_rho: Array1<f64>,
    pub prior_mu: Array2<f64>,
    pub prior_bias_mu: Array1<f64>,
    pub prior_sigma: f64,
}

impl VariationalDense {
    /// Fresh layer: He-initialized means, `rho = RHO_INIT`, zero-mean prior.
    pub fn random(inputs: usize, outputs: usize, prior_sigma: f64, rng: &mut impl Rng) -> Self {
        let dense = DenseLayer::random(inputs, outputs, rng);
        Self {
            rho: Array2::from_elem(dense.w.dim(), RHO_INIT),
            bias_rho: Array1::from_elem(outputs, RHO_INIT),
            prior_mu: Array2::zeros(dense.w.dim()),
            prior_bias_mu: Array1::zeros(outputs),
            mu: dense.w,
            bias_mu: dense.b,
            prior_sigma,
        }
    }

    pub fn sigma(&self) -> Array2<f64> {
        self.rho.mapv(softplus)
    }

    pub fn bias_sigma(&self) -> Array1<f64> {
        self.bias_rho.mapv(softplus)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mu.dim()
    }

    /// Closed-form `KL(q || p)` summed over weights and biases.
    pub fn kl(&self) -> f64 {
        let sp = self.prior_sigma;
        let term = |mu: f64, rho: f64, prior: f64| {
            let sq = softplus(rho);
            (sp / sq).ln() + (sq * sq + (mu - prior).powi(2)) / (2.0 * sp * sp) - 0.5
        };
        let weights: f64 = Zip::from(&self.mu)
            .and(&self.rho)
            .and(&self.prior_mu)
            .fold(0.0, |acc, &m, &r, &p| acc + term(m, r, p));
        let biases: f64 = Zip::from(&self.bias_mu)
            .and(&self.bias_rho)
            .and(&self.prior_bias_mu)
            .fold(0.0, |acc, &m, &r, &p| acc + term(m, r, p));
        weights + biases
    }

    /// Gradient of [`kl`](Self::kl) in parameter order `mu, rho, bias_mu, bias_rho`.
    fn kl_grad(&self) -> Vec<Vec<f64>> {
        let sp2 = self.prior_sigma * self.prior_sigma;
        let d_mu = |m: f64, p: f64| (m - p) / sp2;
        let d_rho = |r: f64| {
            let s = softplus(r);
            (-1.0 / s + s / sp2) * sigmoid(r)
        };
        vec![
            self.mu.iter().zip(&self.prior_mu).map(|(&m, &p)| d_mu(m, p)).collect(),
            self.rho.iter().map(|&r| d_rho(r)).collect(),
            self.bias_mu.iter().zip(&self.prior_bias_mu).map(|(&m, &p)| d_mu(m, p)).collect(),
            self.bias_rho.iter().map(|&r| d_rho(r)).collect(),
        ]
    }
}

/// Affine layer preceded by inverted dropout on its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutDense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub rate: f64,
}

impl DropoutDense {
    pub fn new(dense: DenseLayer, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self {
            w: dense.w,
            b: dense.b,
            rate,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Flipout(VariationalDense),
    Dropout(DropoutDense),
}

/// Noise consumed by one stochastic forward pass of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerNoise {
    None,
    Flipout {
        /// Shared `[in, out]` standard normal perturbation.
        weight: Array2<f64>,
        /// Per-example `[B, in]` signs.
        sign_in: Array2<f64>,
        /// Per-example `[B, out]` signs.
        sign_out: Array2<f64>,
        /// Per-example `[B, out]` standard normal bias noise.
        bias: Array2<f64>,
    },
    Dropout {
        /// `[B, in]` mask with entries `0` or `1 / (1 - rate)`.
        mask: Array2<f64>,
    },
}

fn rademacher(shape: (usize, usize), rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || if rng.random::<bool>() { 1.0 } else { -1.0 })
}

fn gaussian(shape: (usize, usize), rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample::<f64, _>(StandardNormal))
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Flipout(_) => "flipout",
            Layer::Dropout(_) => "dropout",
        }
    }

    /// `(inputs, outputs)`.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Layer::Dense(l) => l.w.dim(),
            Layer::Flipout(l) => l.mu.dim(),
            Layer::Dropout(l) => l.w.dim(),
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Layer::Dense(_) | Layer::Dropout(_) => &["w", "b"],
            Layer::Flipout(_) => &["mu", "rho", "bias_mu", "bias_rho"],
        }
    }

    /// Trainable parameter tensors, flattened row-major.
    pub fn params(&self) -> Vec<&[f64]> {
        fn s<D: Dimension>(a: &Array<f64, D>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        match self {
            Layer::Dense(l) => vec![s(&l.w), s(&l.b)],
            Layer::Dropout(l) => vec![s(&l.w), s(&l.b)],
            Layer::Flipout(l) => vec![s(&l.mu), s(&l.rho), s(&l.bias_mu), s(&l.bias_rho)],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        fn s<D: Dimension>(a: &mut Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        match self {
            Layer::Dense(l) => vec![s(&mut l.w), s(&mut l.b)],
            Layer::Dropout(l) => vec![s(&mut l.w), s(&mut l.b)],
            Layer::Flipout(l) => vec![
                s(&mut l.mu),
                s(&mut l.rho),
                s(&mut l.bias_mu),
                s(&mut l.bias_rho),
            ],
        }
    }

    pub fn kl(&self) -> f64 {
        match self {
            Layer::Flipout(l) => l.kl(),
            _ => 0.0,
        }
    }

    /// Gradient of the KL term, aligned with [`params`](Self::params).
    pub fn kl_grad(&self) -> Vec<Vec<f64>> {
        match self {
            Layer::Flipout(l) => l.kl_grad(),
            _ => self.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        match self {
            Layer::Dense(_) => false,
            Layer::Flipout(_) => true,
            Layer::Dropout(l) => l.rate > 0.0,
        }
    }

    pub fn sample_noise(&self, batch: usize, rng: &mut impl Rng) -> LayerNoise {
        let (inputs, outputs) = self.dims();
        match self {
            Layer::Dense(_) => LayerNoise::None,
            Layer::Flipout(_) => LayerNoise::Flipout {
                weight: gaussian((inputs, outputs), rng),
                sign_in: rademacher((batch, inputs), rng),
                sign_out: rademacher((batch, outputs), rng),
                bias: gaussian((batch, outputs), rng),
            },
            Layer::Dropout(l) => {
                if l.rate == 0.0 {
                    return LayerNoise::Dropout {
                        mask: Array2::ones((batch, inputs)),
                    };
                }
                let keep = Bernoulli::new(1.0 - l.rate).expect("rate in [0, 1)");
                let scale = 1.0 / (1.0 - l.rate);
                LayerNoise::Dropout {
                    mask: Array2::from_shape_simple_fn((batch, inputs), || {
                        if keep.sample(rng) {
                            scale
                        } else {
                            0.0
                        }
                    }),
                }
            }
        }
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        let (inputs, _) = self.dims();
        if x.ncols() != inputs {
            return Err(Error::Shape(format!(
                "{} layer expects {inputs} inputs, got {}",
                self.kind(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn check_noise(&self, x: &Array2<f64>, noise: &LayerNoise) -> Result<()> {
        let (inputs, outputs) = self.dims();
        let b = x.nrows();
        let ok = match (self, noise) {
            (Layer::Dense(_), LayerNoise::None) => true,
            (
                Layer::Flipout(_),
                LayerNoise::Flipout {
                    weight,
                    sign_in,
                    sign_out,
                    bias,
                },
            ) => {
                weight.dim() == (inputs, outputs)
                    && sign_in.dim() == (b, inputs)
                    && sign_out.dim() == (b, outputs)
                    && bias.dim() == (b, outputs)
            }
            (Layer::Dropout(_), LayerNoise::Dropout { mask }) => mask.dim() == (b, inputs),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "noise does not match {} layer for a batch of {b}",
                self.kind()
            )))
        }
    }

    /// Forward pass with the given noise.
    pub fn forward(&self, x: &Array2<f64>, noise: &LayerNoise) -> Result<Array2<f64>> {
        self.check_input(x)?;
        self.check_noise(x, noise)?;
        Ok(match (self, noise) {
            (Layer::Dense(l), _) => x.dot(&l.w) + &l.b,
            (
                Layer::Flipout(l),
                LayerNoise::Flipout {
                    weight,
                    sign_in,
                    sign_out,
                    bias,
                },
            ) => {
                let mean = x.dot(&l.mu) + &l.bias_mu;
                let delta = l.sigma() * weight;
                let perturbation = (x * sign_in).dot(&delta) * sign_out;
                let bias_noise = bias * &l.bias_sigma();
                mean + perturbation + bias_noise
            }
            (Layer::Dropout(l), LayerNoise::Dropout { mask }) => (x * mask).dot(&l.w) + &l.b,
            _ => unreachable!("noise checked above"),
        })
    }

    /// Backward pass. Returns the input gradient and the parameter gradients
    /// aligned with [`params`](Self::params).
    pub fn backward(
        &self,
        x: &Array2<f64>,
        noise: &LayerNoise,
        grad_out: &Array2<f64>,
    ) -> Result<(Array2<f64>, Vec<Vec<f64>>)> {
        self.check_input(x)?;
        self.check_noise(x, noise)?;
        Ok(match (self, noise) {
            (Layer::Dense(l), _) => {
                let dw = x.t().dot(grad_out);
                let db = grad_out.sum_axis(Axis(0));
                (grad_out.dot(&l.w.t()), vec![flat(&dw), db.to_vec()])
            }
            (
                Layer::Flipout(l),
                LayerNoise::Flipout {
                    weight,
                    sign_in,
                    sign_out,
                    bias,
                },
            ) => {
                let sigma = l.sigma();
                let delta = &sigma * weight;
                let signed_in = x * sign_in;
                let g = grad_out * sign_out;

                let d_mu = x.t().dot(grad_out);
                let d_delta = signed_in.t().dot(&g);
                let d_rho = Zip::from(&d_delta)
                    .and(weight)
                    .and(&l.rho)
                    .map_collect(|&dd, &e, &r| dd * e * sigmoid(r));
                let d_bias_mu = grad_out.sum_axis(Axis(0));
                let d_bias_sigma = (grad_out * bias).sum_axis(Axis(0));
                let d_bias_rho = Zip::from(&d_bias_sigma)
                    .and(&l.bias_rho)
                    .map_collect(|&ds, &r| ds * sigmoid(r));

                let dx = grad_out.dot(&l.mu.t()) + g.dot(&delta.t()) * sign_in;
                (
                    dx,
                    vec![flat(&d_mu), flat(&d_rho), d_bias_mu.to_vec(), d_bias_rho.to_vec()],
                )
            }
            (Layer::Dropout(l), LayerNoise::Dropout { mask }) => {
                let dropped = x * mask;
                let dw = dropped.t().dot(grad_out);
                let db = grad_out.sum_axis(Axis(0));
                (grad_out.dot(&l.w.t()) * mask, vec![flat(&dw), db.to_vec()])
            }
            _ => unreachable!("noise checked above"),
        })
    }
}

/// One Flipout forward pass drawing fresh noise.
pub fn flipout_forward(
    layer: &VariationalDense,
    x: &Array2<f64>,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    let layer = Layer::Flipout(layer.clone());
    let noise = layer.sample_noise(x.nrows(), rng);
    layer.forward(x, &noise)
}

/// One dropout forward pass. The mask is active regardless of `training`:
/// Monte-Carlo dropout keeps sampling at inference time.
pub fn mc_dropout_forward(
    layer: &DropoutDense,
    x: &Array2<f64>,
    rng: &mut impl Rng,
    _training: bool,
) -> Result<Array2<f64>> {
    let layer = Layer::Dropout(layer.clone());
    let noise = layer.sample_noise(x.nrows(), rng);
    layer.forward(x, &noise)
}

/// Closed-form KL divergence between a layer's posterior and its prior.
pub fn kl_gaussian(layer: &VariationalDense) -> f64 {
    layer.kl()
}
