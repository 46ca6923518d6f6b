use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::net::{probabilities, ToyNet};
use crate::error::{Error, Result};
use crate::tensor_io::McPredictions;

/// Generator for Monte-Carlo pass `pass` under `seed`.
pub fn pass_rng(seed: u64, pass: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pass as u64);
    rng
}

/// `m` stochastic forward passes stacked into `[m, N, C]` probabilities.
/// Passes use independent streams of `seed` and run in parallel.
pub fn mc_predict(net: &ToyNet, x: &Array2<f64>, m: usize, seed: u64) -> Result<McPredictions> {
    if m == 0 {
        return Err(Error::Domain("need at least one Monte-Carlo pass".into()));
    }
    let passes = (0..m)
        .into_par_iter()
        .map(|pass| {
            let logits = net.sample_logits(x, &mut pass_rng(seed, pass))?;
            Ok(probabilities(&logits, net.task))
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = passes.iter().map(|p| p.view()).collect();
    let probs: Array3<f64> =
        ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    McPredictions::new(probs, net.task)
}
