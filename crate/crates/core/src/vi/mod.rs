//! A small variational-inference engine for dense networks: Flipout and
//! Monte-Carlo dropout layers, the ELBO loss, Adam training, MOPED
//! initialization, mixup and two-phase transfer learning.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod moped;
pub mod net;
pub mod optim;
pub mod predict;
pub mod train;
pub mod transfer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use layers::{
    flipout_forward, kl_gaussian, mc_dropout_forward, softplus, Activation, DenseLayer,
    DropoutDense, Layer, LayerNoise, VariationalDense,
};
pub use loss::{elbo_loss, elbo_loss_with_noise, nll, ElboLoss};
pub use moped::{moped_init, moped_layer, MOPED_DELTA};
pub use net::{probabilities, softmax, Block, NetKind, NetNoise, ToyNet, TrainScope};
pub use optim::Adam;
pub use predict::{mc_predict, pass_rng};
pub use train::{mixup, mixup_with_lambda, sample_mixup_lambda, train, train_scoped, Dataset, TrainConfig};
pub use transfer::{
    attach_new_head, phase_configs, pretrain_upstream, train_from_scratch, transfer_two_phase,
    Strategy, TransferOutcome,
};
