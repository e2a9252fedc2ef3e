//! `ovsw` command line. Exit codes: 0 success, 1 usage or config error, 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ovsw_core::bitpack::{packed_infer, report_sizes, PackedModel};
use ovsw_core::network::{Checkpoint, ModelSpec};
use ovsw_core::optim::OptimizerKind;
use serde_json::json;

use crate::config::{ConfigError, TrainConfig, DATA_ENV};
use crate::data::{self, DatasetKind, Split};
use crate::experiments::{check_invariance, compare_optimizers, gamma_ablation};
use crate::train::{evaluate, predict, train_with};

#[derive(Debug, Parser)]
#[command(name = "ovsw", version, about = "Train, analyse and deploy binary conv nets with the OvSW optimizer")]
pub struct Cli {
    /// JSON run config layered over the dataset preset.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Config override, e.g. --set optimizer.kind=vanilla (repeatable, applied in order).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Dataset directory (otherwise dataset.path, then $OVSW_DATA).
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes metrics, flip statistics and checkpoints to output_dir.
    Train,
    /// Float-model accuracy of a checkpoint, or its prediction for one image.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate the training split instead of the test split.
        #[arg(long)]
        train_split: bool,
        /// Print the predicted class of this test image instead of accuracy.
        #[arg(long)]
        index: Option<usize>,
    },
    /// Pack a checkpoint into the bit-packed inference container.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the size report JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Classify test images with a packed model; prints one class per line.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Check that scaling binarized weights leaves logits and gradients unchanged.
    CheckInvariance {
        /// toy or minires (defaults to the configured model).
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Write the JSON report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vanilla-SGD runs at several weight-init scales, recording flip rates.
    AblateGamma {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0f32, 1000.0])]
        gammas: Vec<f32>,
    },
    /// Train with each optimizer and summarise accuracy and flip statistics.
    CompareOptimizers {
        #[arg(long, value_delimiter = ',', default_values_t = vec!["vanilla".to_string(), "lars".into(), "ovsw".into()])]
        optimizers: Vec<String>,
    },
    /// Write deterministic synthetic data in the MNIST / CIFAR-10 file formats.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_dataset, default_value = "mnist")]
        dataset: DatasetKind,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// gzip the MNIST files.
        #[arg(long)]
        gzip: bool,
    },
}

fn parse_dataset(s: &str) -> std::result::Result<DatasetKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "mnist" => Ok(DatasetKind::Mnist),
        "cifar10" | "cifar-10" | "cifar" => Ok(DatasetKind::Cifar10),
        _ => Err(format!("unknown dataset {s:?} (mnist | cifar10)")),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                1
            } else {
                2
            }
        }
    }
}

fn load_split(cfg: &TrainConfig, cli_data: Option<&Path>) -> Result<Split> {
    let Some(dir) = cfg.data_dir(cli_data) else {
        bail!("no dataset directory: pass --data, set dataset.path, or export {DATA_ENV}");
    };
    Ok(data::load(cfg.dataset.name, &dir)?)
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn check_model_fits(spec: &ModelSpec, split: &Split) -> Result<()> {
    let d = &split.test;
    if d.channels != spec.in_channels || d.height != spec.image_size {
        bail!("model {} does not accept {}x{}x{} images (set dataset.name?)", spec.name, d.channels, d.height, d.width);
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = TrainConfig::load(cli.config.as_deref(), &cli.sets)?;
    let data_dir = cli.data.as_deref();
    match &cli.command {
        Command::Train => {
            let split = load_split(&cfg, data_dir)?;
            let out = train_with(&cfg, &split, |m| {
                eprintln!(
                    "epoch {:>3}  loss {:.4}  train_acc {:.4}  test_acc {:.4}  lr {:.5}  {:.1}s",
                    m.epoch, m.train_loss, m.train_acc, m.test_acc, m.lr, m.wall_seconds
                );
            })?;
            let layers: serde_json::Map<_, _> =
                out.flips.layers.iter().map(|l| (l.name.clone(), json!(l.never_flipped_ratio()))).collect();
            print_json(&json!({
                "final_test_acc": out.final_test_acc(),
                "steps": out.optimizer.step,
                "never_flipped_ratio": layers,
                "checkpoint": out.final_checkpoint,
            }))
        }
        Command::Eval { checkpoint, train_split, index } => {
            let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let split = load_split(&cfg, data_dir)?;
            check_model_fits(&ck.model.spec, &split)?;
            if let Some(i) = index {
                if *i >= split.test.len() {
                    bail!("index {i} out of range (test set has {} images)", split.test.len());
                }
                println!("{}", predict(&ck.model, &split.test.select(&[*i]), 1)?[0]);
                return Ok(());
            }
            let set = if *train_split { &split.train } else { &split.test };
            let acc = evaluate(&ck.model, set, cfg.eval_batch_size)?;
            print_json(&json!({ "split": if *train_split { "train" } else { "test" }, "samples": set.len(), "accuracy": acc }))
        }
        Command::Export { checkpoint, out, report } => {
            let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let packed = PackedModel::from_model(&ck.model)?;
            std::fs::write(out, packed.export()?).with_context(|| format!("writing {}", out.display()))?;
            let sizes = serde_json::to_value(report_sizes(&ck.model, &packed)?)?;
            if let Some(p) = report {
                std::fs::write(p, serde_json::to_string_pretty(&sizes)?)?;
            }
            print_json(&sizes)
        }
        Command::Infer { model, index, count } => {
            let bytes = std::fs::read(model).with_context(|| format!("reading {}", model.display()))?;
            let packed = PackedModel::import(&bytes)?;
            let split = load_split(&cfg, data_dir)?;
            let end = index + count;
            if *count == 0 || end > split.test.len() {
                bail!("images {index}..{end} out of range (test set has {} images)", split.test.len());
            }
            let (x, _) = split.test.batch(&(*index..end).collect::<Vec<_>>());
            for class in ovsw_core::network::argmax_rows(&packed_infer(&packed, &x)?) {
                println!("{class}");
            }
            Ok(())
        }
        Command::CheckInvariance { model, batch, out } => {
            let spec = match model {
                Some(name) => ModelSpec::by_name(name).with_context(|| format!("unknown model {name:?}"))?,
                None => cfg.model_spec()?,
            };
            let report = serde_json::to_value(check_invariance(&spec, cfg.seed, *batch)?)?;
            if let Some(p) = out {
                std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
            }
            print_json(&report)?;
            if report["pass"] != json!(true) {
                bail!("weight-scale invariance check failed");
            }
            Ok(())
        }
        Command::AblateGamma { gammas } => {
            let split = load_split(&cfg, data_dir)?;
            print_json(&serde_json::to_value(gamma_ablation(&cfg, &split, gammas)?)?)
        }
        Command::CompareOptimizers { optimizers } => {
            let kinds = optimizers
                .iter()
                .map(|s| s.parse::<OptimizerKind>().map_err(|e| ConfigError::Invalid(e.to_string())))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let split = load_split(&cfg, data_dir)?;
            print_json(&serde_json::to_value(compare_optimizers(&cfg, &split, &kinds)?)?)
        }
        Command::SynthData { out, dataset, train, test, seed, gzip } => {
            let files = match dataset {
                DatasetKind::Mnist => {
                    data::write_synthetic_mnist(out, train.unwrap_or(60_000), test.unwrap_or(10_000), *seed, *gzip)?
                }
                DatasetKind::Cifar10 => {
                    data::write_synthetic_cifar10(out, train.unwrap_or(50_000), test.unwrap_or(10_000), *seed)?
                }
            };
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}
