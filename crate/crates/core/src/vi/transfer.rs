//! Transfer from an upstream network to a downstream task: replace the
//! head, train it on frozen features, then fine-tune everything at a tenth
//! of the learning rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, DenseLayer, DropoutDense, Layer, VariationalDense};
use super::moped::{moped_layer, MOPED_DELTA, MOPED_PRIOR_SIGMA};
use super::net::{Block, NetKind, ToyNet, TrainScope};
use super::train::{train, train_scoped, Dataset, TrainConfig};
use crate::error::{Error, Result};

/// Dropout rate of the replacement head in the dropout strategy.
pub const DROP_HEAD_RATE: f64 = 0.5;
/// Phase-two learning rate divisor.
pub const FINE_TUNE_LR_DIVISOR: f64 = 10.0;

const HEAD_SEED_OFFSET: u64 = 0x4845_4144;
const PHASE2_SEED_OFFSET: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Flipout backbone, new Flipout head.
    Flip,
    /// Deterministic backbone converted with MOPED, new Flipout head.
    DetFlip,
    /// Dropout backbone, new dropout head.
    Drop,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Flip, Strategy::DetFlip, Strategy::Drop];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Flip => "flip",
            Strategy::DetFlip => "det_flip",
            Strategy::Drop => "drop",
        }
    }

    /// Layer family of the pretrained network this strategy starts from.
    pub fn upstream_kind(self) -> NetKind {
        match self {
            Strategy::Flip => NetKind::Flipout,
            Strategy::DetFlip => NetKind::Deterministic,
            Strategy::Drop => NetKind::Dropout,
        }
    }

    /// Layer family of the transferred network.
    pub fn downstream_kind(self) -> NetKind {
        match self {
            Strategy::Flip | Strategy::DetFlip => NetKind::Flipout,
            Strategy::Drop => NetKind::Dropout,
        }
    }

    pub fn moped_delta(self) -> Option<f64> {
        (self == Strategy::DetFlip).then_some(MOPED_DELTA)
    }
}

/// Configurations of the fixed-feature phase and the fine-tuning phase.
pub fn phase_configs(cfg: &TrainConfig) -> (TrainConfig, TrainConfig) {
    let phase2 = TrainConfig {
        learning_rate: cfg.learning_rate / FINE_TUNE_LR_DIVISOR,
        seed: cfg.seed.wrapping_add(PHASE2_SEED_OFFSET),
        ..cfg.clone()
    };
    (cfg.clone(), phase2)
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub strategy: Strategy,
    /// Network after head-only training.
    pub fixed_feature: ToyNet,
    /// Network after full fine-tuning.
    pub fine_tuned: ToyNet,
    pub phase1_trace: Vec<f64>,
    pub phase2_trace: Vec<f64>,
    pub phase1_learning_rate: f64,
    pub phase2_learning_rate: f64,
    pub moped_delta: Option<f64>,
}

fn check_backbone(upstream: &ToyNet, strategy: Strategy) -> Result<()> {
    let ok = |layer: &Layer| match strategy {
        Strategy::Flip => matches!(layer, Layer::Flipout(_)),
        Strategy::DetFlip => matches!(layer, Layer::Dense(_)),
        Strategy::Drop => matches!(layer, Layer::Dense(_) | Layer::Dropout(_)),
    };
    if let Some(bad) = upstream.backbone.iter().find(|b| !ok(&b.layer)) {
        return Err(Error::StrategyMismatch(format!(
            "strategy {} cannot reuse a {} backbone layer",
            strategy.as_str(),
            bad.layer.kind()
        )));
    }
    if strategy == Strategy::Drop
        && !upstream.layers().any(|l| matches!(l, Layer::Dropout(_)))
    {
        return Err(Error::StrategyMismatch(
            "strategy drop needs a network trained with dropout".into(),
        ));
    }
    Ok(())
}

/// Upstream backbone with a fresh head for `data`, before any training.
pub fn attach_new_head(
    upstream: &ToyNet,
    data: &Dataset,
    strategy: Strategy,
    cfg: &TrainConfig,
) -> Result<ToyNet> {
    check_backbone(upstream, strategy)?;
    if data.input_dim() != upstream.input_dim() {
        return Err(Error::DimMismatch(format!(
            "downstream inputs have {} features, backbone expects {}",
            data.input_dim(),
            upstream.input_dim()
        )));
    }
    let backbone = match strategy {
        Strategy::DetFlip => upstream
            .backbone
            .iter()
            .map(|b| {
                let Layer::Dense(dense) = &b.layer else {
                    unreachable!("checked above")
                };
                Ok(Block {
                    layer: Layer::Flipout(moped_layer(dense, MOPED_DELTA, MOPED_PRIOR_SIGMA)?),
                    activation: b.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        Strategy::Flip | Strategy::Drop => upstream.backbone.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(HEAD_SEED_OFFSET));
    let (features, classes) = (upstream.feature_dim(), data.classes());
    let head = match strategy {
        Strategy::Flip | Strategy::DetFlip => {
            Layer::Flipout(VariationalDense::random(features, classes, 1.0, &mut rng))
        }
        Strategy::Drop => Layer::Dropout(DropoutDense::new(
            DenseLayer::random(features, classes, &mut rng),
            DROP_HEAD_RATE,
        )?),
    };
    ToyNet::new(backbone, head, data.task)
}

/// Head-only training followed by full fine-tuning at `lr / 10`, each for
/// `cfg.epochs` epochs with a fresh optimizer.
pub fn transfer_two_phase(
    upstream: &ToyNet,
    data: &Dataset,
    strategy: Strategy,
    cfg: &TrainConfig,
) -> Result<TransferOutcome> {
    let (cfg1, cfg2) = phase_configs(cfg);
    let mut net = attach_new_head(upstream, data, strategy, cfg)?;
    let phase1_trace = train_scoped(&mut net, data, &cfg1, TrainScope::HeadOnly)?;
    let fixed_feature = net.clone();
    let phase2_trace = train_scoped(&mut net, data, &cfg2, TrainScope::All)?;
    Ok(TransferOutcome {
        strategy,
        fixed_feature,
        fine_tuned: net,
        phase1_trace,
        phase2_trace,
        phase1_learning_rate: cfg1.learning_rate,
        phase2_learning_rate: cfg2.learning_rate,
        moped_delta: strategy.moped_delta(),
    })
}

/// Train the upstream network a strategy starts from. The Flipout upstream
/// is itself MOPED-initialized from a deterministic network trained first.
pub fn pretrain_upstream(
    strategy: Strategy,
    data: &Dataset,
    hidden: &[usize],
    activation: Activation,
    cfg: &TrainConfig,
) -> Result<ToyNet> {
    let dims: Vec<usize> = std::iter::once(data.input_dim())
        .chain(hidden.iter().copied())
        .chain(std::iter::once(data.classes()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match strategy.upstream_kind() {
        NetKind::Flipout => {
            let mut det =
                ToyNet::mlp(NetKind::Deterministic, &dims, activation, data.task, 0.0, &mut rng)?;
            train(&mut det, data, cfg)?;
            let to_flip = |layer: &Layer| -> Result<Layer> {
                match layer {
                    Layer::Dense(d) => {
                        Ok(Layer::Flipout(moped_layer(d, MOPED_DELTA, MOPED_PRIOR_SIGMA)?))
                    }
                    _ => unreachable!("deterministic network"),
                }
            };
            let backbone = det
                .backbone
                .iter()
                .map(|b| {
                    Ok(Block {
                        layer: to_flip(&b.layer)?,
                        activation: b.activation,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut net = ToyNet::new(backbone, to_flip(&det.head)?, data.task)?;
            train(&mut net, data, cfg)?;
            Ok(net)
        }
        kind => {
            let mut net = ToyNet::mlp(kind, &dims, activation, data.task, cfg.dropout_rate, &mut rng)?;
            train(&mut net, data, cfg)?;
            Ok(net)
        }
    }
}

/// Reference network of the transferred architecture trained on the
/// downstream data alone with the same two-phase schedule, nothing frozen.
pub fn train_from_scratch(
    strategy: Strategy,
    data: &Dataset,
    hidden: &[usize],
    activation: Activation,
    cfg: &TrainConfig,
) -> Result<ToyNet> {
    let dims: Vec<usize> = std::iter::once(data.input_dim())
        .chain(hidden.iter().copied())
        .chain(std::iter::once(data.classes()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(HEAD_SEED_OFFSET));
    let mut net = ToyNet::mlp(
        strategy.downstream_kind(),
        &dims,
        activation,
        data.task,
        cfg.dropout_rate,
        &mut rng,
    )?;
    if let Layer::Dropout(head) = &mut net.head {
        head.rate = DROP_HEAD_RATE;
    }
    let (cfg1, cfg2) = phase_configs(cfg);
    train(&mut net, data, &cfg1)?;
    train(&mut net, data, &cfg2)?;
    Ok(net)
}
