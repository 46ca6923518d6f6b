//! Command-line front end. Every command writes its outputs atomically and
//! a run manifest next to them, on success and on failure.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 numeric failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{
    curves_to_csv, default_fractions, ood_compare, retention_curve, MeasureSummary,
    DEFAULT_REPLICATIONS,
};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, macro_metrics};
use crate::synthetic::TransferTaskSpec;
use crate::tensor_io::{load_labels, load_predictions, write_atomic, write_npy, McPredictions, Task};
use crate::uncertainty::{decompose, decompose_multilabel_per_class, mean_probabilities, Measure};
use crate::vi::{
    mc_predict, pretrain_upstream, save_checkpoint, train_from_scratch, transfer_two_phase,
    Activation, Strategy, TrainConfig,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "bayes-uq", version, about = "Uncertainty decomposition and calibration for Monte-Carlo classifier ensembles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split predictive uncertainty into aleatoric and epistemic parts.
    Decompose {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        /// `[N, 3]` output tensor; a `.summary.json` is written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Metric versus retained-data curves sorted by uncertainty.
    Retention {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        /// Repeatable; all three measures when omitted.
        #[arg(long, value_enum)]
        measure: Vec<Measure>,
        #[arg(long, default_value_t = DEFAULT_REPLICATIONS)]
        replications: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated fractions; twenty points 0.05..1.00 by default.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy, macro mAP, macro AUC and d-prime.
    Metrics {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        out: PathBuf,
    },
    /// Box-plot statistics of uncertainty on in-distribution and OOD data.
    OodCompare {
        #[arg(long)]
        preds_in: PathBuf,
        #[arg(long)]
        preds_ood: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        out: PathBuf,
    },
    /// End-to-end transfer-learning demo on synthetic data.
    Demo {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Input path to SHA-256 hex digest.
    pub input_digests: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub wall_time_seconds: f64,
    #[serde(default)]
    pub details: BTreeMap<String, serde_json::Value>,
}

fn sha256_file(path: &Path) -> String {
    match std::fs::read(path) {
        Ok(bytes) => Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
        Err(_) => "unreadable".to_string(),
    }
}

/// `out` with its extension replaced by `suffix`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

/// Configuration of the `demo` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoConfig {
    pub train: TrainConfig,
    pub strategy: Strategy,
    #[serde(default)]
    pub dataset: TransferTaskSpec,
    pub upstream_epochs: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub mc_samples: usize,
    pub replications: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                epochs: 200,
                batch_size: 32,
                mixup_alpha: 0.0,
                ..TrainConfig::default()
            },
            strategy: Strategy::Flip,
            dataset: TransferTaskSpec::default(),
            upstream_epochs: 150,
            hidden: vec![32, 32],
            activation: Activation::Relu,
            mc_samples: 30,
            replications: DEFAULT_REPLICATIONS,
        }
    }
}

/// Seed offsets of the demo subsystems.
pub mod seed_offsets {
    pub const DATASET: u64 = 0;
    pub const UPSTREAM: u64 = 1;
    pub const TRANSFER: u64 = 2;
    pub const PREDICT: u64 = 3;
    pub const RETENTION: u64 = 4;
}

struct Outcome {
    inputs: Vec<PathBuf>,
    seed: Option<u64>,
    details: BTreeMap<String, serde_json::Value>,
}

impl Outcome {
    fn new(inputs: Vec<PathBuf>, seed: Option<u64>) -> Self {
        Self {
            inputs,
            seed,
            details: BTreeMap::new(),
        }
    }
}

/// Parse arguments, run the command and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let started = Instant::now();
    let (name, manifest_path, inputs, seed) = describe(&cli.command);
    let mut outcome = Outcome::new(inputs, seed);
    let result = execute(&cli.command, &mut outcome);

    let manifest = RunManifest {
        command: name.to_string(),
        status: if result.is_ok() { "ok" } else { "error" }.to_string(),
        error: result.as_ref().err().map(|e| e.to_string()),
        input_digests: outcome
            .inputs
            .iter()
            .map(|p| (p.display().to_string(), sha256_file(p)))
            .collect(),
        seed: outcome.seed,
        tool_version: TOOL_VERSION.to_string(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        details: outcome.details,
    };
    if let Some(parent) = manifest_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        let _ = std::fs::create_dir_all(parent);
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    if let Err(e) = write_atomic(&manifest_path, text.as_bytes()) {
        eprintln!("warning: could not write manifest {}: {e}", manifest_path.display());
    }

    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn describe(cmd: &Command) -> (&'static str, PathBuf, Vec<PathBuf>, Option<u64>) {
    match cmd {
        Command::Decompose { preds, out, .. } => {
            ("decompose", sibling(out, "manifest.json"), vec![preds.clone()], None)
        }
        Command::Retention {
            preds,
            labels,
            seed,
            out,
            ..
        } => (
            "retention",
            sibling(out, "manifest.json"),
            vec![preds.clone(), labels.clone()],
            Some(*seed),
        ),
        Command::Metrics {
            preds, labels, out, ..
        } => (
            "metrics",
            sibling(out, "manifest.json"),
            vec![preds.clone(), labels.clone()],
            None,
        ),
        Command::OodCompare {
            preds_in,
            preds_ood,
            out,
            ..
        } => (
            "ood-compare",
            sibling(out, "manifest.json"),
            vec![preds_in.clone(), preds_ood.clone()],
            None,
        ),
        Command::Demo { config, seed, out } => (
            "demo",
            out.join("manifest.json"),
            config.iter().cloned().collect(),
            *seed,
        ),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())?;
    Ok(())
}

fn execute(cmd: &Command, outcome: &mut Outcome) -> Result<()> {
    match cmd {
        Command::Decompose { preds, task, out } => {
            let preds = load_predictions(preds, *task)?;
            write_decomposition(&preds, out)
        }
        Command::Retention {
            preds,
            labels,
            task,
            measure,
            replications,
            seed,
            fractions,
            out,
        } => {
            let preds = load_predictions(preds, *task)?;
            let labels = load_labels(labels, *task, preds.items(), preds.classes())?;
            let measures = if measure.is_empty() {
                Measure::ALL.to_vec()
            } else {
                measure.clone()
            };
            let fractions = fractions.clone().unwrap_or_else(default_fractions);
            let curves = measures
                .iter()
                .map(|&m| retention_curve(&preds, &labels, m, &fractions, *replications, *seed))
                .collect::<Result<Vec<_>>>()?;
            write_atomic(out, curves_to_csv(&curves).as_bytes())?;
            Ok(())
        }
        Command::Metrics {
            preds,
            labels,
            task,
            out,
        } => {
            let preds = load_predictions(preds, *task)?;
            let labels = load_labels(labels, *task, preds.items(), preds.classes())?;
            let report = macro_metrics(&preds, &labels)?;
            write_atomic(out, report.to_json().as_bytes())?;
            Ok(())
        }
        Command::OodCompare {
            preds_in,
            preds_ood,
            task,
            out,
        } => {
            let a = load_predictions(preds_in, *task)?;
            let b = load_predictions(preds_ood, *task)?;
            if a.classes() != b.classes() {
                return Err(Error::Shape(format!(
                    "in-distribution predictions have {} classes, OOD {}",
                    a.classes(),
                    b.classes()
                )));
            }
            let cmp = ood_compare(&decompose(&a), &decompose(&b))?;
            write_json(out, &cmp)
        }
        Command::Demo { config, seed, out } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)?;
                    let cfg: DemoConfig = serde_json::from_str(&text)?;
                    cfg
                }
                None => DemoConfig::default(),
            };
            if let Some(s) = seed {
                cfg.train.seed = *s;
            }
            outcome.seed = Some(cfg.train.seed);
            run_demo(&cfg, out, &mut outcome.details)
        }
    }
}

/// Write the `[N, 3]` triples, the per-measure box statistics and, for
/// multi-label predictions, the `[N, C, 3]` per-class triples.
pub fn write_decomposition(preds: &McPredictions, out: &Path) -> Result<()> {
    let triple = decompose(preds);
    write_atomic(out, &write_npy(&triple.to_tensor()))?;
    if preds.task() == Task::Multilabel {
        let per_class = decompose_multilabel_per_class(preds)?;
        write_atomic(&sibling(out, "per_class.npy"), &write_npy(&per_class.to_tensor()))?;
    }
    if triple.is_empty() {
        return Err(Error::EmptyInput("predictions cover zero items".into()));
    }
    write_json(&sibling(out, "summary.json"), &MeasureSummary::of(&triple)?)
}

/// Full pipeline: pretrain upstream, transfer, predict, decompose, evaluate.
pub fn run_demo(
    cfg: &DemoConfig,
    out: &Path,
    details: &mut BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    use seed_offsets as off;
    cfg.train.validate()?;
    if cfg.mc_samples == 0 || cfg.replications == 0 {
        return Err(Error::Config("mc_samples and replications must be positive".into()));
    }
    std::fs::create_dir_all(out)?;
    let seed = cfg.train.seed;
    details.insert("strategy".into(), cfg.strategy.as_str().into());
    details.insert(
        "moped_delta".into(),
        cfg.strategy.moped_delta().map_or(serde_json::Value::Null, Into::into),
    );
    details.insert("config".into(), serde_json::to_value(cfg)?);

    let task = cfg.dataset.generate(seed.wrapping_add(off::DATASET));
    let upstream_cfg = TrainConfig {
        epochs: cfg.upstream_epochs,
        seed: seed.wrapping_add(off::UPSTREAM),
        ..cfg.train.clone()
    };
    let upstream = pretrain_upstream(
        cfg.strategy,
        &task.upstream,
        &cfg.hidden,
        cfg.activation,
        &upstream_cfg,
    )?;
    let transfer_cfg = TrainConfig {
        seed: seed.wrapping_add(off::TRANSFER),
        ..cfg.train.clone()
    };
    let outcome = transfer_two_phase(&upstream, &task.downstream_train, cfg.strategy, &transfer_cfg)?;
    details.insert("phase1_learning_rate".into(), outcome.phase1_learning_rate.into());
    details.insert("phase2_learning_rate".into(), outcome.phase2_learning_rate.into());

    let ckpt = out.join("checkpoints");
    save_checkpoint(&upstream, &ckpt.join("upstream"), upstream_cfg.seed)?;
    save_checkpoint(&outcome.fixed_feature, &ckpt.join("fixed_feature"), transfer_cfg.seed)?;
    save_checkpoint(&outcome.fine_tuned, &ckpt.join("fine_tuned"), transfer_cfg.seed)?;

    let test = &task.downstream_test;
    let labels = test.labels();
    write_atomic(&out.join("labels.npy"), &write_npy(&labels.to_tensor()))?;
    let mut metrics = BTreeMap::new();
    for (tag, net) in [("fixed_feature", &outcome.fixed_feature), ("fine_tuned", &outcome.fine_tuned)] {
        let preds = mc_predict(net, &test.x, cfg.mc_samples, seed.wrapping_add(off::PREDICT))?;
        write_atomic(&out.join(format!("predictions_{tag}.npy")), &write_npy(&preds.to_tensor()))?;
        write_decomposition(&preds, &out.join(format!("uncertainty_{tag}.npy")))?;
        let report = macro_metrics(&preds, &labels)?;
        let curves = Measure::ALL
            .iter()
            .map(|&m| {
                retention_curve(
                    &preds,
                    &labels,
                    m,
                    &default_fractions(),
                    cfg.replications,
                    seed.wrapping_add(off::RETENTION),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        write_atomic(&out.join(format!("retention_{tag}.csv")), curves_to_csv(&curves).as_bytes())?;
        metrics.insert(tag, serde_json::to_value(&report)?);
    }
    write_json(&out.join("metrics.json"), &metrics)?;
    write_json(
        &out.join("loss_trace.json"),
        &serde_json::json!({
            "phase1": outcome.phase1_trace,
            "phase2": outcome.phase2_trace,
        }),
    )?;
    Ok(())
}

/// Test accuracy of the transferred network against the same architecture
/// trained on the downstream data alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScratchComparison {
    pub fixed_feature: f64,
    pub fine_tuned: f64,
    pub scratch: f64,
}

/// Run the demo's training pipeline plus a from-scratch baseline with the
/// same seeds and schedule, and score both on the downstream test split.
pub fn compare_with_scratch(cfg: &DemoConfig) -> Result<ScratchComparison> {
    use seed_offsets as off;
    cfg.train.validate()?;
    let seed = cfg.train.seed;
    let task = cfg.dataset.generate(seed.wrapping_add(off::DATASET));
    let upstream_cfg = TrainConfig {
        epochs: cfg.upstream_epochs,
        seed: seed.wrapping_add(off::UPSTREAM),
        ..cfg.train.clone()
    };
    let upstream = pretrain_upstream(cfg.strategy, &task.upstream, &cfg.hidden, cfg.activation, &upstream_cfg)?;
    let transfer_cfg = TrainConfig {
        seed: seed.wrapping_add(off::TRANSFER),
        ..cfg.train.clone()
    };
    let outcome = transfer_two_phase(&upstream, &task.downstream_train, cfg.strategy, &transfer_cfg)?;
    let scratch = train_from_scratch(
        cfg.strategy,
        &task.downstream_train,
        &cfg.hidden,
        cfg.activation,
        &transfer_cfg,
    )?;
    let test = &task.downstream_test;
    let labels = test.labels();
    let score = |net| -> Result<f64> {
        let preds = mc_predict(net, &test.x, cfg.mc_samples, seed.wrapping_add(off::PREDICT))?;
        accuracy(&mean_probabilities(&preds), &labels)
    };
    Ok(ScratchComparison {
        fixed_feature: score(&outcome.fixed_feature)?,
        fine_tuned: score(&outcome.fine_tuned)?,
        scratch: score(&scratch)?,
    })
}
