//! Seeded training loop with metrics, flip instrumentation, checkpoints and resume.
//!
//! Every random draw comes from a stream forked off the run seed, so two runs
//! with the same config produce byte-identical checkpoints, and resuming from
//! an epoch checkpoint reproduces the uninterrupted run exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use ovsw_core::binops::sign;
use ovsw_core::fliptrack::{FlipStats, LayerFlips};
use ovsw_core::network::{argmax_rows, build_model, cross_entropy_loss, Checkpoint, Model, ParamKind};
use ovsw_core::optim::Optimizer;
use ovsw_core::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::TrainConfig;
use crate::data::{DataError, Dataset, Split};

const STREAM_INIT: u64 = 1;
const STREAM_SUBSET: u64 = 2;
const STREAM_TEST_SUBSET: u64 = 3;
const STREAM_SHUFFLE: u64 = 1_000;
const STREAM_AUGMENT: u64 = 1_000_000;
pub const CROP_PAD: usize = 4;

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,lr,wall_seconds";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    #[serde(skip)]
    pub wall_seconds: f64,
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{:.3}", r.epoch, r.train_loss, r.train_acc, r.test_acc, r.lr, r.wall_seconds);
    }
    s
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: Optimizer,
    pub flips: FlipStats,
    pub metrics: Vec<EpochMetrics>,
    pub final_checkpoint: Option<PathBuf>,
}

impl TrainOutcome {
    pub fn final_test_acc(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.test_acc)
    }
}

/// Top-1 accuracy in eval mode.
pub fn evaluate(model: &Model, data: &Dataset, batch_size: usize) -> Result<f64> {
    let preds = predict(model, data, batch_size)?;
    let correct = preds.iter().zip(&data.labels).filter(|(p, &l)| **p == l as usize).count();
    Ok(correct as f64 / data.len() as f64)
}

pub fn predict(model: &Model, data: &Dataset, batch_size: usize) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Err(DataError::Empty.into());
    }
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = data.batch(chunk);
        out.extend(model.predict(&x)?);
    }
    Ok(out)
}

/// Train/test sets after the configured seeded subsetting.
pub fn select_data(config: &TrainConfig, split: &Split) -> (Dataset, Dataset) {
    let root = Rng::new(config.seed);
    (
        split.train.subset(config.dataset.subset, &mut root.fork(STREAM_SUBSET)),
        split.test.subset(config.dataset.test_subset, &mut root.fork(STREAM_TEST_SUBSET)),
    )
}

/// The part of the config that determines the trajectory; stored in checkpoints
/// and compared on resume.
fn fingerprint(config: &TrainConfig) -> Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    let o = v.as_object_mut().unwrap();
    for k in ["output_dir", "resume_from", "checkpoint_every", "eval_batch_size"] {
        o.remove(k);
    }
    o["dataset"].as_object_mut().unwrap().remove("path");
    v
}

fn tracked_names(config: &TrainConfig, model: &Model) -> Result<Vec<String>> {
    let binarized: Vec<String> = model
        .param_info()
        .into_iter()
        .filter(|p| p.kind == ParamKind::BinarizedWeight)
        .map(|p| p.name)
        .collect();
    if config.tracked_layers.is_empty() {
        return Ok(binarized);
    }
    for name in &config.tracked_layers {
        ensure!(binarized.contains(name), "tracked layer {name:?} is not a binarized weight (have {binarized:?})");
    }
    Ok(config.tracked_layers.clone())
}

fn flips_to_json(flips: &FlipStats) -> Value {
    Value::Array(
        flips
            .layers
            .iter()
            .map(|l| {
                json!({
                    "name": l.name,
                    "cumulative_flips": l.cumulative_flips,
                    "epoch_flip_rate": l.epoch_flip_rate,
                    "epoch_never_flipped": l.epoch_never_flipped,
                })
            })
            .collect(),
    )
}

fn flips_from_json(v: &Value, init: &Model, names: &[String]) -> Result<FlipStats> {
    #[derive(Deserialize)]
    struct Saved {
        name: String,
        cumulative_flips: Vec<u32>,
        epoch_flip_rate: Vec<f64>,
        epoch_never_flipped: Vec<f64>,
    }
    let saved: Vec<Saved> = serde_json::from_value(v.clone()).context("checkpoint flip statistics")?;
    ensure!(
        saved.iter().map(|s| &s.name).eq(names.iter()),
        "checkpoint tracks different layers than the config"
    );
    let mut stats = FlipStats::new();
    for s in saved {
        let w = init.param(&s.name).context("tracked layer missing from model")?;
        stats.layers.push(LayerFlips::restore(s.name, w, s.cumulative_flips, s.epoch_flip_rate, s.epoch_never_flipped)?);
    }
    Ok(stats)
}

fn write_artifacts(dir: &Path, metrics: &[EpochMetrics], flips: &FlipStats) -> Result<()> {
    std::fs::write(dir.join("metrics.csv"), metrics_csv(metrics))?;
    flips.export_csv(dir)?;
    Ok(())
}

pub fn train(config: &TrainConfig, split: &Split) -> Result<TrainOutcome> {
    train_with(config, split, |_| {})
}

/// Runs training, calling `on_epoch` after each finished epoch.
pub fn train_with(config: &TrainConfig, split: &Split, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainOutcome> {
    config.validate()?;
    let spec = config.model_spec()?;
    let root = Rng::new(config.seed);
    let (train_set, test_set) = select_data(config, split);
    ensure!(!train_set.is_empty(), "training set is empty");
    ensure!(!test_set.is_empty(), "test set is empty");
    ensure!(
        train_set.channels == spec.in_channels && train_set.height == spec.image_size,
        "dataset images are {}x{}x{}, model {} expects {}x{}x{}",
        train_set.channels,
        train_set.height,
        train_set.width,
        spec.name,
        spec.in_channels,
        spec.image_size,
        spec.image_size
    );

    let n = train_set.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let mut hyper = config.optimizer.hyper.clone();
    hyper.total_steps = (config.epochs * steps_per_epoch) as u64;

    let init_model = build_model(&spec, &mut root.fork(STREAM_INIT))?;
    let names = tracked_names(config, &init_model)?;
    let fp = fingerprint(config);

    let (mut model, mut opt, start_epoch, mut flips, mut metrics) = match &config.resume_from {
        Some(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            ensure!(ck.extra.get("run") == Some(&fp), "checkpoint {} was written by a different run config", path.display());
            ensure!(ck.epoch <= config.epochs, "checkpoint is past the last epoch");
            let opt = ck.optimizer.context("checkpoint has no optimizer state")?;
            let flips = flips_from_json(ck.extra.get("flips").unwrap_or(&Value::Null), &init_model, &names)?;
            let metrics: Vec<EpochMetrics> =
                serde_json::from_value(ck.extra.get("metrics").cloned().unwrap_or(json!([])))?;
            (ck.model, opt, ck.epoch, flips, metrics)
        }
        None => {
            let opt = Optimizer::new(config.optimizer.kind, hyper.clone(), &init_model)?;
            let mut flips = FlipStats::new();
            for name in &names {
                flips.track(name.clone(), init_model.param(name).unwrap());
            }
            (init_model.clone(), opt, 0, flips, Vec::new())
        }
    };

    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    }

    let checkpoint = |model: &Model, opt: &Optimizer, epoch: usize, flips: &FlipStats, metrics: &[EpochMetrics]| {
        let mut extra = Map::new();
        extra.insert("run".into(), fp.clone());
        extra.insert("flips".into(), flips_to_json(flips));
        extra.insert("metrics".into(), serde_json::to_value(metrics).expect("metrics serialize"));
        Checkpoint { model: model.clone(), optimizer: Some(opt.clone()), epoch, extra }
    };

    let started = Instant::now();
    let augment = config.augment();
    for epoch in start_epoch..config.epochs {
        let order = root.fork(STREAM_SHUFFLE + epoch as u64).permutation(n);
        let mut aug = root.fork(STREAM_AUGMENT + epoch as u64);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        let mut lr = opt.current_lr();
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = if augment {
                train_set.augmented_batch(chunk, CROP_PAD, &mut aug)
            } else {
                train_set.batch(chunk)
            };
            let logits = model.forward_train(&x)?;
            let (loss, grad) = cross_entropy_loss(&logits, &y)?;
            if !loss.is_finite() {
                bail!("loss became {loss} at epoch {} step {}", epoch + 1, opt.step);
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            correct += argmax_rows(&logits).iter().zip(&y).filter(|(p, t)| p == t).count();
            let grads = model.backward(&grad)?;
            let before: Vec<_> = names.iter().map(|n| sign(model.param(n).unwrap())).collect::<Result<_, _>>()?;
            lr = opt.step(&mut model, &grads)?;
            for (name, prev) in names.iter().zip(&before) {
                flips.record_step(name, prev, &sign(model.param(name).unwrap())?)?;
            }
        }
        flips.end_epoch();
        let row = EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            test_acc: evaluate(&model, &test_set, config.eval_batch_size)?,
            lr: lr as f64,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        metrics.push(row);

        if let Some(dir) = &config.output_dir {
            write_artifacts(dir, &metrics, &flips)?;
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                checkpoint(&model, &opt, epoch + 1, &flips, &metrics)
                    .save(&dir.join(format!("checkpoint_epoch{}.ckpt", epoch + 1)))?;
            }
        }
    }

    let mut final_checkpoint = None;
    if let Some(dir) = &config.output_dir {
        write_artifacts(dir, &metrics, &flips)?;
        let path = dir.join(FINAL_CHECKPOINT);
        checkpoint(&model, &opt, config.epochs, &flips, &metrics).save(&path)?;
        final_checkpoint = Some(path);
    }
    Ok(TrainOutcome { model, optimizer: opt, flips, metrics, final_checkpoint })
}
