//! Posterior and prior initialization from pretrained deterministic weights.

use super::layers::{inverse_softplus, DenseLayer, VariationalDense, SIGMA_FLOOR};
use crate::error::{Error, Result};

/// Scale of the posterior standard deviation relative to `|w|`.
pub const MOPED_DELTA: f64 = 0.5;

/// Unit prior standard deviation used with pretrained prior means.
pub const MOPED_PRIOR_SIGMA: f64 = 1.0;

fn rho_for(w: f64, delta: f64) -> f64 {
    inverse_softplus((delta * w.abs()).max(SIGMA_FLOOR))
}

/// Variational layer centred on `det`: posterior means and prior means are
/// the pretrained values and posterior standard deviations are
/// `max(delta * |w|, 1e-6)`. Biases are treated like weights.
pub fn moped_layer(det: &DenseLayer, delta: f64, prior_sigma: f64) -> Result<VariationalDense> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("moped delta {delta} must be positive")));
    }
    if !(prior_sigma > 0.0) {
        return Err(Error::Domain(format!("prior sigma {prior_sigma} must be positive")));
    }
    Ok(VariationalDense {
        mu: det.w.clone(),
        rho: det.w.mapv(|w| rho_for(w, delta)),
        bias_mu: det.b.clone(),
        bias_rho: det.b.mapv(|b| rho_for(b, delta)),
        prior_mu: det.w.clone(),
        prior_bias_mu: det.b.clone(),
        prior_sigma,
    })
}

pub fn moped_init(det: &[DenseLayer], delta: f64, prior_sigma: f64) -> Result<Vec<VariationalDense>> {
    det.iter().map(|l| moped_layer(l, delta, prior_sigma)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vi::layers::softplus;
    use ndarray::array;

    #[test]
    fn sigma_is_delta_times_weight() {
        let det = DenseLayer {
            w: array![[1.0, -2.0], [0.0, 1e-9]],
            b: array![0.25, 0.0],
        };
        let v = moped_layer(&det, MOPED_DELTA, 1.0).unwrap();
        let s = v.sigma();
        assert!((s[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((s[[0, 1]] - 1.0).abs() < 1e-12);
        assert!((s[[1, 0]] - 1e-6).abs() < 1e-12);
        assert!((s[[1, 1]] - 1e-6).abs() < 1e-12);
        assert!((v.bias_sigma()[0] - 0.125).abs() < 1e-12);
        assert_eq!(v.mu, det.w);
        assert_eq!(v.prior_mu, det.w);
        assert_eq!(v.prior_bias_mu, det.b);
    }

    #[test]
    fn softplus_recovers_sigma() {
        for sigma in [1e-6, 1e-3, 0.1, 0.5, 2.0, 40.0] {
            assert!((softplus(inverse_softplus(sigma)) - sigma).abs() <= 1e-12 * sigma.max(1.0));
        }
    }

    #[test]
    fn rejects_non_positive_delta() {
        let det = DenseLayer {
            w: array![[1.0]],
            b: array![0.0],
        };
        assert!(moped_layer(&det, 0.0, 1.0).is_err());
        assert!(moped_layer(&det, 0.5, 0.0).is_err());
    }
}
