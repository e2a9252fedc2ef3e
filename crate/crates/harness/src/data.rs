//! MNIST (IDX, raw or gzip) and CIFAR-10 (binary batches) loaders, plus
//! deterministic synthetic stand-ins written in the same on-disk formats.
//!
//! Pixels are kept as bytes and normalized per channel when a batch is built:
//! MNIST mean 0.1307 / std 0.3081; CIFAR-10 mean (0.4914, 0.4822, 0.4465) /
//! std (0.2470, 0.2435, 0.2616).

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ovsw_core::{Rng, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MNIST_MEAN: [f32; 1] = [0.1307];
pub const MNIST_STD: [f32; 1] = [0.3081];
pub const CIFAR_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const CIFAR_TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";
pub const MNIST_FILES: [&str; 4] =
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: bad magic number: expected {expected:#010x}, found {actual:#010x}")]
    Magic { file: PathBuf, expected: u32, actual: u32 },
    #[error("{file}: truncated: expected {expected} bytes, found {actual} (file is incomplete or corrupt; verify its checksum against the published one)")]
    Truncated { file: PathBuf, expected: usize, actual: usize },
    #[error("{file}: {reason}")]
    Invalid { file: PathBuf, reason: String },
    #[error("dataset file not found: {0} (run `ovsw synth-data` to generate stand-in data, or point --data / OVSW_DATA at the real files)")]
    Missing(PathBuf),
    #[error("empty dataset slice")]
    Empty,
    #[error("io error on {file}: {source}")]
    Io { file: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn default_model(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "toy",
            DatasetKind::Cifar10 => "minires",
        }
    }
}

/// Images stored as bytes `[N, C, H, W]`, normalized on access.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn label_histogram(&self) -> [usize; 10] {
        let mut h = [0; 10];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Normalized image `i` written into `out` (length `image_len`).
    fn write_image(&self, i: usize, out: &mut [f32]) {
        let plane = self.height * self.width;
        let src = &self.pixels[i * self.image_len()..(i + 1) * self.image_len()];
        for c in 0..self.channels {
            let (m, s) = (self.mean[c], self.std[c]);
            for (o, &p) in out[c * plane..(c + 1) * plane].iter_mut().zip(&src[c * plane..(c + 1) * plane]) {
                *o = (p as f32 / 255.0 - m) / s;
            }
        }
    }

    /// Normalized batch for `indices`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let len = self.image_len();
        let mut data = vec![0.0; indices.len() * len];
        for (k, &i) in indices.iter().enumerate() {
            self.write_image(i, &mut data[k * len..(k + 1) * len]);
        }
        let x = Tensor::new(vec![indices.len(), self.channels, self.height, self.width], data)
            .expect("batch shape is consistent");
        (x, indices.iter().map(|&i| self.labels[i] as usize).collect())
    }

    /// Batch with random crop (zero padding of `pad` pixels, i.e. black) and
    /// horizontal flip, drawn from `rng` in index order.
    pub fn augmented_batch(&self, indices: &[usize], pad: usize, rng: &mut Rng) -> (Tensor, Vec<usize>) {
        let (c, h, w) = (self.channels, self.height, self.width);
        let len = self.image_len();
        let mut data = vec![0.0; indices.len() * len];
        let mut clean = vec![0.0; len];
        for (k, &i) in indices.iter().enumerate() {
            self.write_image(i, &mut clean);
            let dy = rng.below(2 * pad + 1) as isize - pad as isize;
            let dx = rng.below(2 * pad + 1) as isize - pad as isize;
            let flip = rng.coin();
            let out = &mut data[k * len..(k + 1) * len];
            for ch in 0..c {
                let black = -self.mean[ch] / self.std[ch];
                for y in 0..h {
                    for x in 0..w {
                        let sx = if flip { w - 1 - x } else { x } as isize + dx;
                        let sy = y as isize + dy;
                        out[(ch * h + y) * w + x] = if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                            clean[(ch * h + sy as usize) * w + sx as usize]
                        } else {
                            black
                        };
                    }
                }
            }
        }
        let x = Tensor::new(vec![indices.len(), c, h, w], data).expect("batch shape is consistent");
        (x, indices.iter().map(|&i| self.labels[i] as usize).collect())
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let len = self.image_len();
        let mut pixels = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            pixels.extend_from_slice(&self.pixels[i * len..(i + 1) * len]);
        }
        Dataset {
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_header()
        }
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Dataset {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// A seeded random subset holding `ceil(fraction·len)` samples, in original order.
    pub fn subset(&self, fraction: f64, rng: &mut Rng) -> Dataset {
        if fraction >= 1.0 {
            return self.clone();
        }
        let keep = ((self.len() as f64 * fraction).ceil() as usize).min(self.len());
        let mut idx = rng.permutation(self.len());
        idx.truncate(keep);
        idx.sort_unstable();
        self.select(&idx)
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            pixels: Vec::new(),
            labels: Vec::new(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let io = |source| DataError::Io { file: path.to_path_buf(), source };
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(File::open(path).map_err(io)?).read_to_end(&mut bytes).map_err(io)?;
    } else {
        File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
    }
    Ok(bytes)
}

/// Finds `name` or `name.gz` directly in `dir` or in a conventional subdirectory.
fn locate(dir: &Path, name: &str, subdirs: &[&str]) -> Result<PathBuf> {
    for sub in std::iter::once("").chain(subdirs.iter().copied()) {
        let base = if sub.is_empty() { dir.to_path_buf() } else { dir.join(sub) };
        for candidate in [base.join(name), base.join(format!("{name}.gz"))] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    Err(DataError::Missing(dir.join(name)))
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().unwrap())
}

fn parse_idx(path: &Path, bytes: &[u8], magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    if bytes.len() < 4 {
        return Err(DataError::Truncated { file: path.into(), expected: 4, actual: bytes.len() });
    }
    let actual = be_u32(bytes, 0);
    if actual != magic {
        return Err(DataError::Magic { file: path.into(), expected: magic, actual });
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(DataError::Truncated { file: path.into(), expected: header, actual: bytes.len() });
    }
    let dims: Vec<usize> = (0..ndim).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(DataError::Truncated { file: path.into(), expected, actual: bytes.len() });
    }
    Ok((dims, bytes[header..expected].to_vec()))
}

fn load_idx_pair(dir: &Path, images: &str, labels: &str) -> Result<Dataset> {
    let subdirs = ["mnist", "MNIST/raw"];
    let ip = locate(dir, images, &subdirs)?;
    let lp = locate(dir, labels, &subdirs)?;
    let (idims, pixels) = parse_idx(&ip, &read_file(&ip)?, IDX_IMAGES_MAGIC)?;
    let (ldims, labels) = parse_idx(&lp, &read_file(&lp)?, IDX_LABELS_MAGIC)?;
    if idims[0] != ldims[0] {
        return Err(DataError::Invalid {
            file: lp,
            reason: format!("{} labels for {} images", ldims[0], idims[0]),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(DataError::Invalid { file: lp, reason: format!("label {bad} out of range 0..9") });
    }
    Ok(Dataset {
        pixels,
        labels,
        channels: 1,
        height: idims[1],
        width: idims[2],
        mean: MNIST_MEAN.to_vec(),
        std: MNIST_STD.to_vec(),
    })
}

pub fn load_mnist(dir: &Path) -> Result<Split> {
    Ok(Split {
        train: load_idx_pair(dir, MNIST_FILES[0], MNIST_FILES[1])?,
        test: load_idx_pair(dir, MNIST_FILES[2], MNIST_FILES[3])?,
    })
}

fn parse_cifar(path: &Path, bytes: &[u8], into: &mut Dataset) -> Result<()> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        let expected = bytes.len().div_ceil(CIFAR_RECORD).max(1) * CIFAR_RECORD;
        return Err(DataError::Truncated { file: path.into(), expected, actual: bytes.len() });
    }
    for rec in bytes.chunks(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(DataError::Invalid {
                file: path.into(),
                reason: format!("label byte {} out of range 0..9 (not a CIFAR-10 binary batch?)", rec[0]),
            });
        }
        into.labels.push(rec[0]);
        into.pixels.extend_from_slice(&rec[1..]);
    }
    Ok(())
}

fn empty_cifar() -> Dataset {
    Dataset {
        pixels: Vec::new(),
        labels: Vec::new(),
        channels: 3,
        height: 32,
        width: 32,
        mean: CIFAR_MEAN.to_vec(),
        std: CIFAR_STD.to_vec(),
    }
}

pub fn load_cifar10(dir: &Path) -> Result<Split> {
    let subdirs = ["cifar-10-batches-bin", "cifar10"];
    let mut train = empty_cifar();
    for f in CIFAR_TRAIN_FILES {
        let p = locate(dir, f, &subdirs)?;
        parse_cifar(&p, &read_file(&p)?, &mut train)?;
    }
    let mut test = empty_cifar();
    let p = locate(dir, CIFAR_TEST_FILE, &subdirs)?;
    parse_cifar(&p, &read_file(&p)?, &mut test)?;
    Ok(Split { train, test })
}

pub fn load(kind: DatasetKind, dir: &Path) -> Result<Split> {
    match kind {
        DatasetKind::Mnist => load_mnist(dir),
        DatasetKind::Cifar10 => load_cifar10(dir),
    }
}

// ---------------------------------------------------------------------------
// Synthetic stand-ins

fn write_bytes(path: &Path, bytes: &[u8], gzip: bool) -> Result<PathBuf> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| DataError::Io { file: p, source }
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io(parent))?;
    }
    if gzip {
        let path = path.with_file_name(format!("{}.gz", path.file_name().unwrap().to_string_lossy()));
        let mut enc = GzEncoder::new(File::create(&path).map_err(io(&path))?, Compression::fast());
        enc.write_all(bytes).map_err(io(&path))?;
        enc.finish().map_err(io(&path))?;
        Ok(path)
    } else {
        std::fs::write(path, bytes).map_err(io(path))?;
        Ok(path.to_path_buf())
    }
}

fn idx_bytes(magic: u32, dims: &[usize], payload: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

/// Balanced labels in shuffled order.
fn balanced_labels(n: usize, rng: &mut Rng) -> Vec<u8> {
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    rng.shuffle(&mut labels);
    labels
}

/// Stroke glyphs: each class owns two prototypes of three thick line segments;
/// samples are shifted, rescaled in intensity, and noised.
struct Glyphs {
    strokes: Vec<Vec<[f32; 4]>>,
}

impl Glyphs {
    fn new(rng: &mut Rng) -> Self {
        let strokes = (0..20)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        [
                            rng.uniform_f32(6.0, 21.0),
                            rng.uniform_f32(6.0, 21.0),
                            rng.uniform_f32(6.0, 21.0),
                            rng.uniform_f32(6.0, 21.0),
                        ]
                    })
                    .collect()
            })
            .collect();
        Self { strokes }
    }

    fn render(&self, label: usize, rng: &mut Rng, out: &mut [u8]) {
        let proto = &self.strokes[label * 2 + rng.below(2)];
        let dx = rng.below(5) as f32 - 2.0;
        let dy = rng.below(5) as f32 - 2.0;
        let ink = rng.uniform_f32(0.55, 1.0);
        for (p, o) in out.iter_mut().enumerate() {
            let (x, y) = ((p % 28) as f32 - dx, (p / 28) as f32 - dy);
            let mut v: f32 = 0.0;
            for s in proto {
                let (ax, ay, bx, by) = (s[0], s[1], s[2], s[3]);
                let (vx, vy) = (bx - ax, by - ay);
                let t = (((x - ax) * vx + (y - ay) * vy) / (vx * vx + vy * vy).max(1e-6)).clamp(0.0, 1.0);
                let d = ((x - ax - t * vx).powi(2) + (y - ay - t * vy).powi(2)).sqrt();
                v = v.max((1.6 - d).clamp(0.0, 1.0));
            }
            let noisy = 255.0 * ink * v + 45.0 * rng.standard_normal();
            *o = noisy.clamp(0.0, 255.0) as u8;
        }
    }
}

/// Writes MNIST-format synthetic data (`n_train` / `n_test` images of 28×28).
pub fn write_synthetic_mnist(dir: &Path, n_train: usize, n_test: usize, seed: u64, gzip: bool) -> Result<Vec<PathBuf>> {
    let root = Rng::new(seed);
    let glyphs = Glyphs::new(&mut root.fork(0));
    let mut written = Vec::new();
    for (split, n, stream) in [("train", n_train, 1u64), ("t10k", n_test, 2)] {
        let mut rng = root.fork(stream);
        let labels = balanced_labels(n, &mut rng);
        let mut pixels = vec![0u8; n * 784];
        for (i, &l) in labels.iter().enumerate() {
            glyphs.render(l as usize, &mut rng, &mut pixels[i * 784..(i + 1) * 784]);
        }
        let images = idx_bytes(IDX_IMAGES_MAGIC, &[n, 28, 28], &pixels);
        let label_file = idx_bytes(IDX_LABELS_MAGIC, &[n], &labels);
        written.push(write_bytes(&dir.join(format!("{split}-images-idx3-ubyte")), &images, gzip)?);
        written.push(write_bytes(&dir.join(format!("{split}-labels-idx1-ubyte")), &label_file, gzip)?);
    }
    Ok(written)
}

/// Colour textures: each class mixes two oriented gratings with its own colours;
/// samples get a random phase, brightness and pixel noise.
struct Textures {
    params: Vec<[f32; 12]>,
}

impl Textures {
    fn new(rng: &mut Rng) -> Self {
        let params = (0..10)
            .map(|_| {
                let mut p = [0.0; 12];
                for g in 0..2 {
                    p[g * 6] = rng.uniform_f32(0.0, std::f32::consts::PI);
                    p[g * 6 + 1] = rng.uniform_f32(0.25, 0.9);
                    for c in 0..3 {
                        p[g * 6 + 2 + c] = rng.uniform_f32(-1.0, 1.0);
                    }
                }
                p
            })
            .collect();
        Self { params }
    }

    fn render(&self, label: usize, rng: &mut Rng, out: &mut [u8]) {
        let p = &self.params[label];
        let phases = [rng.uniform_f32(0.0, 6.3), rng.uniform_f32(0.0, 6.3)];
        let bright = rng.uniform_f32(-0.15, 0.15);
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let mut v = 0.5 + bright;
                    for g in 0..2 {
                        let (theta, freq) = (p[g * 6], p[g * 6 + 1]);
                        let u = x as f32 * theta.cos() + y as f32 * theta.sin();
                        v += 0.2 * p[g * 6 + 2 + c] * (freq * u + phases[g]).sin();
                    }
                    let noisy = 255.0 * v + 40.0 * rng.standard_normal();
                    out[(c * 32 + y) * 32 + x] = noisy.clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
}

/// Writes CIFAR-10-format synthetic batches: `n_train` images spread over the
/// five training files, `n_test` in the test file.
pub fn write_synthetic_cifar10(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let root = Rng::new(seed);
    let tex = Textures::new(&mut root.fork(0));
    let mut written = Vec::new();
    let render = |n: usize, stream: u64| {
        let mut rng = root.fork(stream);
        let labels = balanced_labels(n, &mut rng);
        let mut bytes = vec![0u8; n * CIFAR_RECORD];
        for (i, &l) in labels.iter().enumerate() {
            let rec = &mut bytes[i * CIFAR_RECORD..(i + 1) * CIFAR_RECORD];
            rec[0] = l;
            tex.render(l as usize, &mut rng, &mut rec[1..]);
        }
        bytes
    };
    for (b, name) in CIFAR_TRAIN_FILES.iter().enumerate() {
        let n = n_train / 5 + usize::from(b < n_train % 5);
        written.push(write_bytes(&dir.join(name), &render(n, 1 + b as u64), false)?);
    }
    written.push(write_bytes(&dir.join(CIFAR_TEST_FILE), &render(n_test, 10), false)?);
    Ok(written)
}
