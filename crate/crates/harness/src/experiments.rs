//! Scripted experiments: weight-scale invariance check, initialization-scale
//! ablation and optimizer comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Result};
use ovsw_core::network::{build_model, cross_entropy_loss, Model, ModelSpec, ParamKind};
use ovsw_core::optim::OptimizerKind;
use ovsw_core::{Rng, Tensor};
use serde::Serialize;

use crate::config::TrainConfig;
use crate::data::Split;
use crate::train::{train, TrainOutcome};

pub const INVARIANCE_THRESHOLD: f64 = 1e-5;
pub const INVARIANCE_GAMMAS: [f32; 3] = [0.01, 1.0, 100.0];

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceRow {
    pub gamma: f32,
    /// max|Δlogits| / max|logits| against γ = 1.
    pub logit_deviation: f64,
    /// Same measure over the gradients of all binarized weights.
    pub grad_deviation: f64,
    pub within_threshold: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceReport {
    pub model: String,
    pub threshold: f64,
    pub rows: Vec<InvarianceRow>,
    /// Same procedure with the per-channel scales α multiplied by γ as well.
    pub negative_control: Vec<InvarianceRow>,
    pub negative_control_detected: bool,
    pub pass: bool,
}

fn relative_deviation(a: &[f32], reference: &[f32]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, &v| m.max(v.abs() as f64));
    let diff = a.iter().zip(reference).fold(0.0f64, |m, (&x, &y)| m.max((x as f64 - y as f64).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Train-mode logits and binarized-weight gradients on one batch.
fn probe(model: &mut Model, x: &Tensor, labels: &[usize]) -> Result<(Vec<f32>, Vec<f32>)> {
    let logits = model.forward_train(x)?;
    let (_, g) = cross_entropy_loss(&logits, labels)?;
    let grads = model.backward(&g)?;
    let kinds = model.param_info();
    let flat = grads
        .iter()
        .zip(&kinds)
        .filter(|(_, p)| p.kind == ParamKind::BinarizedWeight)
        .flat_map(|(g, _)| g.data().iter().copied())
        .collect();
    Ok((logits.into_data(), flat))
}

/// Scales every binarized weight by γ ∈ {0.01, 1, 100} and compares one
/// forward + backward pass against γ = 1 on a fixed Gaussian batch.
pub fn check_invariance(spec: &ModelSpec, seed: u64, batch: usize) -> Result<InvarianceReport> {
    ensure!(batch >= 2, "batch norm needs at least two samples");
    let root = Rng::new(seed);
    let base = build_model(spec, &mut root.fork(1))?;
    let mut rng = root.fork(2);
    let s = spec.image_size;
    let n = batch * spec.in_channels * s * s;
    let x = Tensor::new(vec![batch, spec.in_channels, s, s], (0..n).map(|_| rng.standard_normal()).collect())?;
    let labels: Vec<usize> = (0..batch).map(|i| i % spec.num_classes).collect();

    let (ref_logits, ref_grads) = probe(&mut base.clone(), &x, &labels)?;
    let run = |scale_alpha: bool| -> Result<Vec<InvarianceRow>> {
        INVARIANCE_GAMMAS
            .iter()
            .map(|&gamma| {
                let mut m = base.clone();
                m.scale_binarized_weights(gamma);
                if scale_alpha {
                    m.scale_alphas(gamma);
                }
                let (l, g) = probe(&mut m, &x, &labels)?;
                let logit_deviation = relative_deviation(&l, &ref_logits);
                let grad_deviation = relative_deviation(&g, &ref_grads);
                Ok(InvarianceRow {
                    gamma,
                    logit_deviation,
                    grad_deviation,
                    within_threshold: logit_deviation <= INVARIANCE_THRESHOLD && grad_deviation <= INVARIANCE_THRESHOLD,
                })
            })
            .collect()
    };
    let rows = run(false)?;
    let negative_control = run(true)?;
    let negative_control_detected = negative_control.iter().any(|r| !r.within_threshold);
    Ok(InvarianceReport {
        model: spec.name.clone(),
        threshold: INVARIANCE_THRESHOLD,
        pass: rows.iter().all(|r| r.within_threshold),
        rows,
        negative_control,
        negative_control_detected,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerSummary {
    pub layer: String,
    pub never_flipped_ratio: f64,
    pub mean_epoch_flip_rate: f64,
    pub epoch_flip_rate: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub final_test_acc: f64,
    pub steps: u64,
    pub layers: Vec<LayerSummary>,
}

impl RunSummary {
    fn from_outcome(label: String, out: &TrainOutcome) -> Self {
        let layers = out
            .flips
            .layers
            .iter()
            .map(|l| LayerSummary {
                layer: l.name.clone(),
                never_flipped_ratio: l.never_flipped_ratio(),
                mean_epoch_flip_rate: l.epoch_flip_rate.iter().sum::<f64>() / l.epoch_flip_rate.len().max(1) as f64,
                epoch_flip_rate: l.epoch_flip_rate.clone(),
            })
            .collect();
        Self { label, final_test_acc: out.final_test_acc(), steps: out.optimizer.step, layers }
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSummary> {
        self.layers.iter().find(|l| l.layer == name)
    }
}

fn summary_csv(first_column: &str, runs: &[RunSummary]) -> String {
    let mut s = format!("{first_column},final_test_acc,layer,never_flipped_ratio,mean_epoch_flip_rate\n");
    for r in runs {
        for l in &r.layers {
            let _ = writeln!(s, "{},{},{},{},{}", r.label, r.final_test_acc, l.layer, l.never_flipped_ratio, l.mean_epoch_flip_rate);
        }
    }
    s
}

fn sub_dir(base: &TrainConfig, name: &str) -> Option<PathBuf> {
    base.output_dir.as_ref().map(|d| d.join(name))
}

/// Trains with vanilla SGD at each weight-init scale γ. Writes one
/// `flip_rate_gamma{γ}_{layer}.csv` per (γ, layer) plus `gamma_ablation.csv`.
pub fn gamma_ablation(base: &TrainConfig, split: &Split, gammas: &[f32]) -> Result<Vec<RunSummary>> {
    ensure!(!gammas.is_empty(), "no gamma values given");
    let mut runs = Vec::new();
    for &gamma in gammas {
        let mut cfg = base.clone();
        cfg.optimizer.kind = OptimizerKind::Vanilla;
        cfg.init.scale_gamma = gamma;
        cfg.output_dir = sub_dir(base, &format!("gamma_{gamma}"));
        let out = train(&cfg, split)?;
        if let Some(dir) = &base.output_dir {
            for l in &out.flips.layers {
                let file = dir.join(format!("flip_rate_gamma{gamma}_{}.csv", l.name.replace('.', "_")));
                std::fs::write(file, l.epoch_csv())?;
            }
        }
        runs.push(RunSummary::from_outcome(gamma.to_string(), &out));
    }
    if let Some(dir) = &base.output_dir {
        write_summary(dir, "gamma_ablation", "gamma", &runs)?;
    }
    Ok(runs)
}

/// Trains the same config with each optimizer; writes `optimizer_comparison.csv`.
pub fn compare_optimizers(base: &TrainConfig, split: &Split, kinds: &[OptimizerKind]) -> Result<Vec<RunSummary>> {
    ensure!(!kinds.is_empty(), "no optimizers given");
    let mut runs = Vec::new();
    for &kind in kinds {
        let mut cfg = base.clone();
        cfg.optimizer.kind = kind;
        cfg.output_dir = sub_dir(base, kind.as_str());
        let out = train(&cfg, split)?;
        runs.push(RunSummary::from_outcome(kind.as_str().into(), &out));
    }
    if let Some(dir) = &base.output_dir {
        write_summary(dir, "optimizer_comparison", "optimizer", &runs)?;
    }
    Ok(runs)
}

fn write_summary(dir: &Path, stem: &str, first_column: &str, runs: &[RunSummary]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.csv")), summary_csv(first_column, runs))?;
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(runs)?)?;
    Ok(())
}
