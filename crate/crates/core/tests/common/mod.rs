#![allow(dead_code)]

use bayes_uq::vi::{
    elbo_loss_with_noise, Activation, Block, DenseLayer, DropoutDense, Layer, NetNoise, ToyNet,
    VariationalDense,
};
use bayes_uq::Task;
use ndarray::Array2;
use rand::Rng;

/// Random layer of the given kind with spread-out parameters.
pub fn random_layer(kind: usize, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Layer {
    match kind % 3 {
        0 => Layer::Dense(DenseLayer::random(inputs, outputs, rng)),
        1 => {
            let mut l = VariationalDense::random(inputs, outputs, rng.random_range(0.5..2.0), rng);
            l.rho.mapv_inplace(|_| rng.random_range(-4.0..0.5));
            l.bias_rho.mapv_inplace(|_| rng.random_range(-4.0..0.5));
            l.bias_mu.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            l.prior_mu.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            l.prior_bias_mu.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            Layer::Flipout(l)
        }
        _ => {
            let mut d = DenseLayer::random(inputs, outputs, rng);
            d.b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            Layer::Dropout(DropoutDense::new(d, rng.random_range(0.0..0.7)).unwrap())
        }
    }
}

/// Random net with 0 to 2 hidden blocks and mixed layer kinds.
pub fn random_net(task: Task, rng: &mut impl Rng) -> ToyNet {
    let hidden = rng.random_range(0..3);
    let mut dims = vec![rng.random_range(1..5)];
    for _ in 0..hidden {
        dims.push(rng.random_range(2..6));
    }
    dims.push(rng.random_range(2..5));
    let acts = [Activation::Identity, Activation::Relu, Activation::Tanh];
    let mut layers: Vec<Layer> = dims
        .windows(2)
        .map(|w| random_layer(rng.random_range(0..3), w[0], w[1], rng))
        .collect();
    let head = layers.pop().unwrap();
    let backbone = layers
        .into_iter()
        .map(|layer| Block {
            layer,
            activation: acts[rng.random_range(0..3)],
        })
        .collect();
    ToyNet::new(backbone, head, task).unwrap()
}

/// Soft multi-class or multi-hot targets.
pub fn random_targets(task: Task, rows: usize, classes: usize, rng: &mut impl Rng) -> Array2<f64> {
    match task {
        Task::Multiclass => {
            let mut t = Array2::zeros((rows, classes));
            for mut row in t.rows_mut() {
                row[rng.random_range(0..classes)] = 1.0;
            }
            t
        }
        Task::Multilabel => Array2::from_shape_simple_fn((rows, classes), || {
            if rng.random::<bool>() {
                1.0
            } else {
                0.0
            }
        }),
    }
}

pub fn random_inputs(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.5..1.5))
}

/// Largest relative gap between analytic and central-difference gradients
/// over every parameter coordinate. Gaps are relative to
/// `max(|analytic|, |numeric|, 1e-6)`.
pub fn max_gradient_error(
    net: &ToyNet,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    kl_scale: f64,
    noises: &[NetNoise],
) -> f64 {
    let h = 1e-5;
    let analytic = elbo_loss_with_noise(net, x, targets, kl_scale, noises).unwrap().grads;
    let loss = |n: &ToyNet| elbo_loss_with_noise(n, x, targets, kl_scale, noises).unwrap().loss;
    let mut worst = 0.0f64;
    for (t, tensor) in analytic.iter().enumerate() {
        for (j, &a) in tensor.iter().enumerate() {
            let mut plus = net.clone();
            plus.params_mut()[t][j] += h;
            let mut minus = net.clone();
            minus.params_mut()[t][j] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

/// Pre-activations within this distance of a ReLU kink make central
/// differences meaningless; such draws are rejected.
pub fn near_relu_kink(net: &ToyNet, x: &Array2<f64>, noises: &[NetNoise]) -> bool {
    let mut h = x.clone();
    for noise in noises {
        h.clone_from(x);
        for (block, n) in net.backbone.iter().zip(noise) {
            let z = block.layer.forward(&h, n).unwrap();
            if block.activation == Activation::Relu && z.iter().any(|v| v.abs() < 1e-3) {
                return true;
            }
            h = block.activation.apply(&z);
        }
    }
    false
}

/// Random valid predictions. Some entries are exactly 0 or 1 so the
/// `0 ln 0` convention is exercised.
pub fn random_predictions(
    task: Task,
    m: usize,
    n: usize,
    c: usize,
    rng: &mut impl Rng,
) -> bayes_uq::McPredictions {
    let mut probs = ndarray::Array3::<f64>::zeros((m, n, c));
    for s in 0..m {
        for i in 0..n {
            let sharp = rng.random_range(0.2..8.0);
            for k in 0..c {
                let u: f64 = rng.random();
                probs[[s, i, k]] = match task {
                    Task::Multiclass if rng.random_bool(0.1) => 0.0,
                    Task::Multiclass => u.powf(sharp),
                    Task::Multilabel if rng.random_bool(0.05) => 0.0,
                    Task::Multilabel if rng.random_bool(0.05) => 1.0,
                    Task::Multilabel => u,
                };
            }
            if task == Task::Multiclass {
                let mut row = probs.slice_mut(ndarray::s![s, i, ..]);
                if row.sum() == 0.0 {
                    row[rng.random_range(0..c)] = 1.0;
                }
                let total = row.sum();
                row.mapv_inplace(|p| p / total);
            }
        }
    }
    bayes_uq::McPredictions::new(probs, task).unwrap()
}
