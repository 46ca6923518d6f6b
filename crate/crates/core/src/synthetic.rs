//! Synthetic data sets for demos and tests.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor_io::{LabelSet, McPredictions, Task};
use crate::vi::Dataset;

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Two interleaving half circles with Gaussian jitter, two classes.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 2));
    let mut y = Array2::zeros((n, 2));
    for i in 0..n {
        let class = i % 2;
        let t = PI * rng.random::<f64>();
        let (px, py) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        x[[i, 0]] = px + noise * normal(&mut rng);
        x[[i, 1]] = py + noise * normal(&mut rng);
        y[[i, class]] = 1.0;
    }
    Dataset::new(x, y, Task::Multiclass).expect("rows agree")
}

/// Gaussian blobs on a circle in a 2-D latent plane, embedded into a higher
/// dimensional input space through a fixed nonlinear map shared by every
/// task built from the same `BlobSpace`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpace {
    pub input_dim: usize,
    pub radius: f64,
    pub latent_noise: f64,
    pub input_noise: f64,
    pub embedding_seed: u64,
}

impl Default for BlobSpace {
    fn default() -> Self {
        Self {
            input_dim: 12,
            radius: 2.0,
            latent_noise: 0.9,
            input_noise: 1.0,
            embedding_seed: 2024,
        }
    }
}

impl BlobSpace {
    fn embedding(&self) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.embedding_seed);
        let a = Array2::from_shape_simple_fn((self.input_dim, 2), || normal(&mut rng));
        let phase = (0..self.input_dim).map(|_| 2.0 * PI * rng.random::<f64>()).collect();
        (a, phase)
    }

    /// `per_class` items for each of `classes` blobs centred at angles
    /// `rotation + 2 pi k / classes`.
    pub fn sample(&self, classes: usize, per_class: usize, rotation: f64, seed: u64) -> Dataset {
        let (a, phase) = self.embedding();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = classes * per_class;
        let mut x = Array2::zeros((n, self.input_dim));
        let mut y = Array2::zeros((n, classes));
        for i in 0..n {
            let class = i % classes;
            let angle = rotation + 2.0 * PI * class as f64 / classes as f64;
            let z0 = self.radius * angle.cos() + self.latent_noise * normal(&mut rng);
            let z1 = self.radius * angle.sin() + self.latent_noise * normal(&mut rng);
            for d in 0..self.input_dim {
                let proj = a[[d, 0]] * z0 + a[[d, 1]] * z1;
                x[[i, d]] = (proj / 2.0 + phase[d]).sin() * 2.0 + self.input_noise * normal(&mut rng);
            }
            y[[i, class]] = 1.0;
        }
        Dataset::new(x, y, Task::Multiclass).expect("rows agree")
    }
}

/// Upstream/downstream pair: eight blobs upstream, four blobs rotated by
/// `pi / 8` downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferTaskSpec {
    pub space: BlobSpace,
    pub upstream_classes: usize,
    pub upstream_per_class: usize,
    pub downstream_classes: usize,
    pub downstream_train_per_class: usize,
    pub downstream_test_per_class: usize,
    pub rotation: f64,
}

impl Default for TransferTaskSpec {
    fn default() -> Self {
        Self {
            space: BlobSpace::default(),
            upstream_classes: 8,
            upstream_per_class: 60,
            downstream_classes: 4,
            downstream_train_per_class: 10,
            downstream_test_per_class: 100,
            rotation: PI / 8.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransferTask {
    pub upstream: Dataset,
    pub downstream_train: Dataset,
    pub downstream_test: Dataset,
}

impl TransferTaskSpec {
    pub fn generate(&self, seed: u64) -> TransferTask {
        let s = &self.space;
        TransferTask {
            upstream: s.sample(self.upstream_classes, self.upstream_per_class, 0.0, seed),
            downstream_train: s.sample(
                self.downstream_classes,
                self.downstream_train_per_class,
                self.rotation,
                seed.wrapping_add(1),
            ),
            downstream_test: s.sample(
                self.downstream_classes,
                self.downstream_test_per_class,
                self.rotation,
                seed.wrapping_add(2),
            ),
        }
    }
}

/// Monte-Carlo predictions of a calibrated multi-class predictor.
///
/// Each item gets a difficulty `d ~ U(0, 1)`. The predicted class is correct
/// with probability equal to its confidence `1/C + (1 - 1/C)(1 - d)`, and the
/// per-sample confidence jitters with a spread that grows with `d`.
pub fn calibrated_predictor(
    items: usize,
    samples: usize,
    classes: usize,
    seed: u64,
) -> Result<(McPredictions, LabelSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = classes as f64;
    let floor = 1.0 / c;
    let mut probs = Array3::zeros((samples, items, classes));
    let mut labels = Vec::with_capacity(items);
    for n in 0..items {
        let label = rng.random_range(0..classes);
        let difficulty: f64 = rng.random();
        let confidence = floor + (1.0 - floor) * (1.0 - difficulty);
        let predicted = if rng.random::<f64>() < confidence {
            label
        } else {
            (label + rng.random_range(1..classes)) % classes
        };
        for m in 0..samples {
            let jitter = 0.15 * difficulty * normal(&mut rng);
            let conf = (confidence + jitter).clamp(floor, 0.995);
            let rest = (1.0 - conf) / (c - 1.0);
            for k in 0..classes {
                probs[[m, n, k]] = if k == predicted { conf } else { rest };
            }
        }
        labels.push(label);
    }
    Ok((
        McPredictions::new(probs, Task::Multiclass)?,
        LabelSet::multiclass(labels, classes)?,
    ))
}

/// Size and seed of the shipped calibrated-predictor instance.
pub const BUNDLED_CALIBRATION: (usize, usize, usize, u64) = (1000, 20, 10, 7);

/// The shipped calibrated-predictor instance: 1000 items, 20 samples,
/// 10 classes.
pub fn bundled_calibrated_predictor() -> Result<(McPredictions, LabelSet)> {
    let (items, samples, classes, seed) = BUNDLED_CALIBRATION;
    calibrated_predictor(items, samples, classes, seed)
}
