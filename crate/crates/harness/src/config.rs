//! Run configuration: JSON files layered over per-dataset presets, with
//! dotted `key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use ovsw_core::network::{InitSpec, ModelSpec};
use ovsw_core::optim::{OptimizerKind, OvswConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::data::DatasetKind;

pub const DATA_ENV: &str = "OVSW_DATA";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path} is not valid JSON: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: DatasetKind,
    /// Directory holding the dataset files; falls back to `--data`, then `OVSW_DATA`.
    pub path: Option<PathBuf>,
    /// Fraction of the training set to use, drawn with the run seed.
    pub subset: f64,
    /// Fraction of the test set to use.
    pub test_subset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// `total_steps` is recomputed from epochs and batch size at train time.
    #[serde(flatten)]
    pub hyper: OvswConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: DatasetConfig,
    pub model: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub init: InitSpec,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Binarized weights to instrument; empty means every binarized layer.
    pub tracked_layers: Vec<String>,
    /// Save a checkpoint every k epochs (0: only the final one).
    pub checkpoint_every: usize,
    pub resume_from: Option<PathBuf>,
    /// Random crop + horizontal flip; defaults to on for CIFAR-10.
    pub augment: Option<bool>,
}

impl TrainConfig {
    pub fn preset(kind: DatasetKind) -> Self {
        Self {
            dataset: DatasetConfig { name: kind, path: None, subset: 1.0, test_subset: 1.0 },
            model: kind.default_model().into(),
            epochs: match kind {
                DatasetKind::Mnist => 20,
                DatasetKind::Cifar10 => 60,
            },
            batch_size: 128,
            eval_batch_size: 256,
            optimizer: OptimizerConfig { kind: OptimizerKind::Ovsw, hyper: OvswConfig::cifar() },
            init: InitSpec::default(),
            seed: 0,
            output_dir: None,
            tracked_layers: Vec::new(),
            checkpoint_every: 0,
            resume_from: None,
            augment: None,
        }
    }

    /// Preset for the dataset named in the overlay, with the overlay merged on top.
    pub fn from_overlay(overlay: &Value) -> Result<Self> {
        let kind = match overlay.pointer("/dataset/name") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|_| ConfigError::Invalid(format!("unknown dataset {v}")))?,
            None => DatasetKind::Mnist,
        };
        let mut base = serde_json::to_value(Self::preset(kind)).expect("config serializes");
        merge(&mut base, overlay, "")?;
        let cfg: Self = serde_json::from_value(base).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config file (optional) plus `key=value` overrides, applied in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut overlay = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.into(), source })?;
                serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: p.into(), source })?
            }
            None => Value::Object(Map::new()),
        };
        for o in overrides {
            apply_override(&mut overlay, o)?;
        }
        Self::from_overlay(&overlay)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut spec = ModelSpec::by_name(&self.model)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown model {:?} (toy | minires)", self.model)))?;
        spec.init = self.init.clone();
        Ok(spec)
    }

    pub fn augment(&self) -> bool {
        self.augment.unwrap_or(self.dataset.name == DatasetKind::Cifar10)
    }

    /// `--data` beats `dataset.path`, which beats `OVSW_DATA`.
    pub fn data_dir(&self, cli: Option<&Path>) -> Option<PathBuf> {
        cli.map(Path::to_path_buf)
            .or_else(|| self.dataset.path.clone())
            .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 || self.eval_batch_size < 1 {
            return bad("batch sizes must be >= 1".into());
        }
        for (k, f) in [("dataset.subset", self.dataset.subset), ("dataset.test_subset", self.dataset.test_subset)] {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("{k} must be in (0, 1], got {f}"));
            }
        }
        if !(self.init.scale_gamma.is_finite() && self.init.scale_gamma > 0.0) {
            return bad(format!("init.scale_gamma must be a positive number, got {}", self.init.scale_gamma));
        }
        let spec = self.model_spec()?;
        let (c, s) = match self.dataset.name {
            DatasetKind::Mnist => (1, 28),
            DatasetKind::Cifar10 => (3, 32),
        };
        if spec.in_channels != c || spec.image_size != s {
            return bad(format!("model {} does not take {:?} images", self.model, self.dataset.name));
        }
        self.optimizer.hyper.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// Deep-merges `overlay` into `base`; keys absent from `base` are rejected.
fn merge(base: &mut Value, overlay: &Value, prefix: &str) -> Result<()> {
    let Value::Object(over) = overlay else {
        *base = overlay.clone();
        return Ok(());
    };
    let Value::Object(b) = base else {
        return Err(ConfigError::Invalid(format!("{prefix} is not an object")));
    };
    for (k, v) in over {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let slot = b.get_mut(k).ok_or_else(|| ConfigError::UnknownKey(path.clone()))?;
        if slot.is_object() {
            merge(slot, v, &path)?;
        } else {
            *slot = v.clone();
        }
    }
    Ok(())
}

/// Sets `a.b.c=value` inside `root`. The value is parsed as JSON when possible,
/// otherwise taken as a string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(spec.into()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        cur = cur.as_object_mut().unwrap().entry(*part).or_insert_with(|| Value::Object(Map::new()));
    }
    if !cur.is_object() {
        *cur = Value::Object(Map::new());
    }
    cur.as_object_mut().unwrap().insert(parts[parts.len() - 1].into(), value);
    Ok(())
}
