//! Shared fixtures: MNIST/CIFAR-10 from `OVSW_DATA` when present, otherwise
//! full-size synthetic stand-ins written once per test binary.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use ovsw::config::{TrainConfig, DATA_ENV};
use ovsw::data::{self, DatasetKind, Split};

pub struct Fixture {
    pub dir: PathBuf,
    pub split: Split,
    pub synthetic: bool,
    _tmp: Option<tempfile::TempDir>,
}

fn real(kind: DatasetKind) -> Option<(PathBuf, Split)> {
    let dir = PathBuf::from(std::env::var_os(DATA_ENV)?);
    let split = data::load(kind, &dir).ok()?;
    Some((dir, split))
}

fn build(kind: DatasetKind) -> Fixture {
    if let Some((dir, split)) = real(kind) {
        return Fixture { dir, split, synthetic: false, _tmp: None };
    }
    let tmp = tempfile::tempdir().unwrap();
    match kind {
        DatasetKind::Mnist => data::write_synthetic_mnist(tmp.path(), 60_000, 10_000, 0, true).unwrap(),
        DatasetKind::Cifar10 => data::write_synthetic_cifar10(tmp.path(), 50_000, 10_000, 0).unwrap(),
    };
    let split = data::load(kind, tmp.path()).unwrap();
    Fixture { dir: tmp.path().to_path_buf(), split, synthetic: true, _tmp: Some(tmp) }
}

pub fn mnist() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| build(DatasetKind::Mnist))
}

pub fn cifar10() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| build(DatasetKind::Cifar10))
}

impl Fixture {
    pub fn source(&self) -> &'static str {
        if self.synthetic {
            "synthetic stand-in"
        } else {
            "real data"
        }
    }
}

/// Config from `key=value` overrides, writing into `out` when given.
pub fn config(overrides: &[&str], out: Option<&Path>) -> TrainConfig {
    let mut sets: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    if let Some(o) = out {
        sets.push(format!("output_dir={}", serde_json::to_string(o).unwrap()));
    }
    TrainConfig::load(None, &sets).unwrap()
}
