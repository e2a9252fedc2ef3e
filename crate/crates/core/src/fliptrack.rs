//! Sign-flip instrumentation for binarized weights: cumulative flip counters,
//! never-flipped masks, per-epoch flip rates and initialization histograms.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HISTOGRAM_BINS: usize = 64;
pub const HISTOGRAM_HEADER: &str = "bin_left,bin_right,count_all,count_never_flipped";
pub const EPOCH_HEADER: &str = "epoch,flip_rate,never_flipped_ratio";

#[derive(Clone, Debug, PartialEq)]
pub struct LayerFlips {
    pub name: String,
    pub cumulative_flips: Vec<u32>,
    /// Fraction of weights that flipped at least once during each finished epoch.
    pub epoch_flip_rate: Vec<f64>,
    /// Never-flipped ratio at the end of each finished epoch.
    pub epoch_never_flipped: Vec<f64>,
    pub init_weights_snapshot: Tensor,
    flipped_this_epoch: Vec<bool>,
}

impl LayerFlips {
    pub fn new(name: impl Into<String>, init_weights: &Tensor) -> Self {
        let n = init_weights.len();
        Self {
            name: name.into(),
            cumulative_flips: vec![0; n],
            epoch_flip_rate: Vec::new(),
            epoch_never_flipped: Vec::new(),
            init_weights_snapshot: init_weights.clone(),
            flipped_this_epoch: vec![false; n],
        }
    }

    /// Rebuilds counters saved at an epoch boundary (no flips pending in the
    /// current epoch).
    pub fn restore(
        name: impl Into<String>,
        init_weights: &Tensor,
        cumulative_flips: Vec<u32>,
        epoch_flip_rate: Vec<f64>,
        epoch_never_flipped: Vec<f64>,
    ) -> Result<Self> {
        if cumulative_flips.len() != init_weights.len() || epoch_flip_rate.len() != epoch_never_flipped.len() {
            return Err(Error::InvalidArgument("inconsistent flip counters".into()));
        }
        let mut l = Self::new(name, init_weights);
        l.cumulative_flips = cumulative_flips;
        l.epoch_flip_rate = epoch_flip_rate;
        l.epoch_never_flipped = epoch_never_flipped;
        Ok(l)
    }

    pub fn len(&self) -> usize {
        self.cumulative_flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative_flips.is_empty()
    }

    pub fn record_step(&mut self, prev_sign: &Tensor, cur_sign: &Tensor) -> Result<()> {
        if prev_sign.shape() != cur_sign.shape() || prev_sign.len() != self.len() {
            return Err(Error::shape("record_step", prev_sign.shape(), cur_sign.shape()));
        }
        for (i, (p, c)) in prev_sign.data().iter().zip(cur_sign.data()).enumerate() {
            if p != c {
                self.cumulative_flips[i] += 1;
                self.flipped_this_epoch[i] = true;
            }
        }
        Ok(())
    }

    pub fn never_flipped(&self) -> Vec<bool> {
        self.cumulative_flips.iter().map(|&c| c == 0).collect()
    }

    pub fn never_flipped_count(&self) -> usize {
        self.cumulative_flips.iter().filter(|&&c| c == 0).count()
    }

    pub fn never_flipped_ratio(&self) -> f64 {
        if self.is_empty() {
            return 1.0;
        }
        self.never_flipped_count() as f64 / self.len() as f64
    }

    /// Closes the current epoch and returns its flip rate.
    pub fn end_epoch(&mut self) -> f64 {
        let rate = if self.is_empty() {
            0.0
        } else {
            self.flipped_this_epoch.iter().filter(|&&f| f).count() as f64 / self.len() as f64
        };
        self.flipped_this_epoch.iter_mut().for_each(|f| *f = false);
        self.epoch_flip_rate.push(rate);
        self.epoch_never_flipped.push(self.never_flipped_ratio());
        rate
    }

    /// 64 uniform bins over the snapshot's [min, max]; values equal to max land in
    /// the last bin. Returns (edges, count_all, count_never_flipped).
    pub fn histogram(&self) -> (Vec<f64>, Vec<usize>, Vec<usize>) {
        let data = self.init_weights_snapshot.data();
        let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
        let (lo, hi) = if data.is_empty() { (0.0, 0.0) } else { (lo, hi) };
        let width = hi - lo;
        let mut edges: Vec<f64> = (0..=HISTOGRAM_BINS)
            .map(|i| lo + width * i as f64 / HISTOGRAM_BINS as f64)
            .collect();
        edges[HISTOGRAM_BINS] = hi;
        let mut all = vec![0usize; HISTOGRAM_BINS];
        let mut never = vec![0usize; HISTOGRAM_BINS];
        for (&v, &c) in data.iter().zip(&self.cumulative_flips) {
            let b = if width > 0.0 {
                (((v as f64 - lo) / width * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
            } else {
                0
            };
            all[b] += 1;
            if c == 0 {
                never[b] += 1;
            }
        }
        (edges, all, never)
    }

    fn histogram_rows(&self, prefix: &str, out: &mut String) {
        let (edges, all, never) = self.histogram();
        for b in 0..HISTOGRAM_BINS {
            let _ = writeln!(out, "{prefix}{},{},{},{}", edges[b], edges[b + 1], all[b], never[b]);
        }
    }

    fn epoch_rows(&self, prefix: &str, out: &mut String) {
        for (e, (r, n)) in self.epoch_flip_rate.iter().zip(&self.epoch_never_flipped).enumerate() {
            let _ = writeln!(out, "{prefix}{},{},{}", e + 1, r, n);
        }
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = format!("{HISTOGRAM_HEADER}\n");
        self.histogram_rows("", &mut s);
        s
    }

    pub fn epoch_csv(&self) -> String {
        let mut s = format!("{EPOCH_HEADER}\n");
        self.epoch_rows("", &mut s);
        s
    }
}

/// Flip statistics for a set of tracked layers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlipStats {
    pub layers: Vec<LayerFlips>,
}

impl FlipStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn track(&mut self, name: impl Into<String>, init_weights: &Tensor) {
        self.layers.push(LayerFlips::new(name, init_weights));
    }

    pub fn layer(&self, name: &str) -> Option<&LayerFlips> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn record_step(&mut self, name: &str, prev_sign: &Tensor, cur_sign: &Tensor) -> Result<()> {
        self.layers
            .iter_mut()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("layer {name} is not tracked")))?
            .record_step(prev_sign, cur_sign)
    }

    pub fn end_epoch(&mut self) {
        self.layers.iter_mut().for_each(|l| {
            l.end_epoch();
        });
    }

    /// Never-flipped weights over all tracked weights (1.0 when nothing is tracked).
    pub fn never_flipped_ratio(&self) -> f64 {
        let total: usize = self.layers.iter().map(LayerFlips::len).sum();
        if total == 0 {
            return 1.0;
        }
        self.layers.iter().map(LayerFlips::never_flipped_count).sum::<usize>() as f64 / total as f64
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = format!("layer,{HISTOGRAM_HEADER}\n");
        for l in &self.layers {
            l.histogram_rows(&format!("{},", l.name), &mut s);
        }
        s
    }

    pub fn epoch_csv(&self) -> String {
        let mut s = format!("layer,{EPOCH_HEADER}\n");
        for l in &self.layers {
            l.epoch_rows(&format!("{},", l.name), &mut s);
        }
        s
    }

    /// Writes `flip_histogram.csv` and `flip_epochs.csv` into `dir`; every row
    /// carries a leading `layer` column.
    pub fn export_csv(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let hist = dir.join("flip_histogram.csv");
        let epochs = dir.join("flip_epochs.csv");
        std::fs::write(&hist, self.histogram_csv())?;
        std::fs::write(&epochs, self.epoch_csv())?;
        Ok((hist, epochs))
    }
}
