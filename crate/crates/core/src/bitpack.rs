//! Inference-only engine: ±1 values packed into 64-bit words, XNOR-popcount
//! convolution, α/BN folding, and the packed-model container.
//!
//! Bit convention: 1 encodes +1, 0 encodes −1. A tensor is packed row by row
//! (one row per leading index, e.g. per filter over `C_in·K·K` in `(c, kh, kw)`
//! order); each row starts on a fresh word and its unused tail bits are 0.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::binops::sign_scalar;
use crate::container::{find, read_container, write_container, Record, PACKED_MAGIC};
use crate::error::{Error, Result};
use crate::network::{save_model, shortcut_path, BatchNorm, Model, ModelSpec, KERNEL, PADDING};
use crate::tensor::{conv2d, Conv2dGeometry, Tensor};

pub const WORD_BITS: usize = 64;

pub fn words_for(n_valid: usize) -> usize {
    n_valid.div_ceil(WORD_BITS)
}

/// Mask selecting the valid bits of the last word of a row.
fn tail_mask(n_valid: usize) -> u64 {
    match n_valid % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedTensor {
    pub logical_shape: Vec<usize>,
    /// Valid bits per row.
    pub n_valid: usize,
    pub words: Vec<u64>,
}

#[derive(Clone, Copy, Debug)]
pub struct PackedRow<'a> {
    pub words: &'a [u64],
    pub n_valid: usize,
}

impl PackedRow<'_> {
    pub fn from_words(words: &[u64], n_valid: usize) -> PackedRow<'_> {
        PackedRow { words, n_valid }
    }
}

impl PackedTensor {
    pub fn rows(&self) -> usize {
        if self.logical_shape.len() >= 2 {
            self.logical_shape[0]
        } else {
            1
        }
    }

    pub fn words_per_row(&self) -> usize {
        words_for(self.n_valid)
    }

    pub fn row(&self, i: usize) -> PackedRow<'_> {
        let w = self.words_per_row();
        PackedRow { words: &self.words[i * w..(i + 1) * w], n_valid: self.n_valid }
    }

    pub fn nbytes(&self) -> usize {
        self.words.len() * 8
    }

    pub fn unpack(&self) -> Tensor {
        let mut out = Vec::with_capacity(self.rows() * self.n_valid);
        for r in 0..self.rows() {
            let row = self.row(r);
            out.extend((0..self.n_valid).map(|i| if row.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1 { 1.0 } else { -1.0 }));
        }
        Tensor::new(self.logical_shape.clone(), out).expect("packed shape is consistent")
    }
}

/// Packs the signs of `x` (sign(0) = +1). Tensors with two or more dims get one
/// row per leading index; 0-d/1-d tensors form a single row.
pub fn pack(x: &Tensor) -> PackedTensor {
    let rows = if x.ndim() >= 2 { x.shape()[0] } else { 1 };
    let n_valid = if rows == 0 { 0 } else { x.len() / rows };
    let wpr = words_for(n_valid);
    let mut words = vec![0u64; rows * wpr];
    for r in 0..rows {
        for (i, &v) in x.data()[r * n_valid..(r + 1) * n_valid].iter().enumerate() {
            if sign_scalar(v) > 0.0 {
                words[r * wpr + i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
        }
    }
    PackedTensor { logical_shape: x.shape().to_vec(), n_valid, words }
}

/// Bit count without relying on the hardware instruction.
pub fn popcount_portable(mut x: u64) -> u32 {
    x -= (x >> 1) & 0x5555_5555_5555_5555;
    x = (x & 0x3333_3333_3333_3333) + ((x >> 2) & 0x3333_3333_3333_3333);
    x = (x + (x >> 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    (x.wrapping_mul(0x0101_0101_0101_0101) >> 56) as u32
}

#[inline]
fn matches(a: &[u64], w: &[u64], mask: u64) -> u32 {
    let last = a.len() - 1;
    let mut m = 0;
    for i in 0..last {
        m += (!(a[i] ^ w[i])).count_ones();
    }
    m + (!(a[last] ^ w[last]) & mask).count_ones()
}

/// ±1 dot product of two packed rows: `2·matches − n_valid`.
pub fn xnor_popcount_dot(a: PackedRow<'_>, w: PackedRow<'_>) -> Result<i64> {
    if a.n_valid != w.n_valid || a.words.len() != w.words.len() || a.words.len() != words_for(a.n_valid) {
        return Err(Error::InvalidArgument(format!(
            "packed rows disagree: n_valid {} vs {}, {} vs {} words",
            a.n_valid,
            w.n_valid,
            a.words.len(),
            w.words.len()
        )));
    }
    if a.n_valid == 0 {
        return Ok(0);
    }
    let m = matches(a.words, w.words, tail_mask(a.n_valid));
    Ok(2 * m as i64 - a.n_valid as i64)
}

/// Same as [`xnor_popcount_dot`] using [`popcount_portable`].
pub fn xnor_popcount_dot_portable(a: PackedRow<'_>, w: PackedRow<'_>) -> Result<i64> {
    xnor_popcount_dot(a, w)?;
    if a.n_valid == 0 {
        return Ok(0);
    }
    let mask = tail_mask(a.n_valid);
    let last = a.words.len() - 1;
    let m: u32 = (0..a.words.len())
        .map(|i| {
            let x = !(a.words[i] ^ w.words[i]);
            popcount_portable(if i == last { x & mask } else { x })
        })
        .sum();
    Ok(2 * m as i64 - a.n_valid as i64)
}

/// Per-output-channel affine applied to raw ±1 conv sums.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldedAffine {
    pub scale: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Folds α and eval-mode BN into `scale·raw + bias`.
pub fn fold_bn(alpha: &[f32], gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32], eps: f32) -> Result<FoldedAffine> {
    let c = alpha.len();
    if [gamma.len(), beta.len(), mean.len(), var.len()].iter().any(|&l| l != c) {
        return Err(Error::InvalidArgument("fold_bn: per-channel vectors differ in length".into()));
    }
    let mut scale = Vec::with_capacity(c);
    let mut bias = Vec::with_capacity(c);
    for k in 0..c {
        let inv = 1.0 / (var[k] as f64 + eps as f64).sqrt();
        scale.push((gamma[k] as f64 * alpha[k] as f64 * inv) as f32);
        bias.push((beta[k] as f64 - gamma[k] as f64 * mean[k] as f64 * inv) as f32);
    }
    let f = FoldedAffine { scale, bias };
    if f.scale.iter().chain(&f.bias).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("fold_bn produced non-finite values".into()));
    }
    Ok(f)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PackedBlock {
    pub weights: PackedTensor,
    pub affine: FoldedAffine,
    pub stride: usize,
    pub shortcut: bool,
}

impl PackedBlock {
    pub fn in_channels(&self) -> usize {
        self.weights.logical_shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.logical_shape[0]
    }

    /// Raw integer conv sums `[N, C_out, H', W']` of sign(a) against the packed
    /// filters; out-of-bounds taps count as +1.
    pub fn raw_conv(&self, a: &Tensor) -> Result<Vec<i32>> {
        let s = a.shape();
        if s.len() != 4 || s[1] != self.in_channels() {
            return Err(Error::shape("packed conv", s, &self.weights.logical_shape));
        }
        let g = Conv2dGeometry::new(s, &self.weights.logical_shape, self.stride, PADDING)?;
        let (oh, ow) = (g.out_h(), g.out_w());
        let n_valid = self.weights.n_valid;
        let wpr = words_for(n_valid);
        let c_out = self.out_channels();
        let plane = s[2] * s[3];
        let mut out = vec![0i32; s[0] * c_out * oh * ow];
        let mut patch = vec![0u64; wpr];
        for b in 0..s[0] {
            let sample = &a.data()[b * s[1] * plane..(b + 1) * s[1] * plane];
            for oy in 0..oh {
                for ox in 0..ow {
                    patch.iter_mut().for_each(|w| *w = 0);
                    let mut bit = 0;
                    for c in 0..s[1] {
                        for ky in 0..KERNEL {
                            for kx in 0..KERNEL {
                                let y = (oy * self.stride + ky) as isize - PADDING as isize;
                                let x = (ox * self.stride + kx) as isize - PADDING as isize;
                                let inside = y >= 0 && x >= 0 && (y as usize) < s[2] && (x as usize) < s[3];
                                let positive =
                                    !inside || sample[c * plane + y as usize * s[3] + x as usize] >= 0.0;
                                if positive {
                                    patch[bit / WORD_BITS] |= 1 << (bit % WORD_BITS);
                                }
                                bit += 1;
                            }
                        }
                    }
                    let prow = PackedRow { words: &patch, n_valid };
                    for co in 0..c_out {
                        let d = xnor_popcount_dot(prow, self.weights.row(co))?;
                        out[((b * c_out + co) * oh + oy) * ow + ox] = d as i32;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&self, a: &Tensor) -> Result<Tensor> {
        let raw = self.raw_conv(a)?;
        let s = a.shape();
        let g = Conv2dGeometry::new(s, &self.weights.logical_shape, self.stride, PADDING)?;
        let (oh, ow) = (g.out_h(), g.out_w());
        let c_out = self.out_channels();
        let inner = oh * ow;
        let mut y: Vec<f32> = raw
            .chunks(inner)
            .enumerate()
            .flat_map(|(i, plane)| {
                let k = i % c_out;
                let (sc, bi) = (self.affine.scale[k], self.affine.bias[k]);
                plane.iter().map(move |&r| sc * r as f32 + bi)
            })
            .collect();
        if self.shortcut {
            let sc = shortcut_path(a, self.stride, c_out)?;
            y.iter_mut().zip(sc.data()).for_each(|(v, &s)| *v += s);
        }
        Tensor::new(vec![s[0], c_out, oh, ow], y)
    }
}

/// Deployable model: full-precision stem and head, packed binarized blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub stem_weight: Tensor,
    pub stem_bn: BatchNorm,
    pub blocks: Vec<PackedBlock>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl PackedModel {
    pub fn from_model(model: &Model) -> Result<Self> {
        let blocks = model
            .blocks
            .iter()
            .map(|b| {
                let s = &b.state;
                Ok(PackedBlock {
                    weights: pack(&s.weight),
                    affine: fold_bn(
                        s.alpha.data(),
                        s.bn.gamma.data(),
                        s.bn.beta.data(),
                        s.bn.running_mean.data(),
                        s.bn.running_var.data(),
                        s.bn.eps,
                    )?,
                    stride: b.stride,
                    shortcut: b.shortcut,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            format_version: crate::container::FORMAT_VERSION,
            spec: model.spec.clone(),
            stem_weight: model.stem.weight.clone(),
            stem_bn: model.stem.bn.clone(),
            blocks,
            head_weight: model.head.weight.clone(),
            head_bias: model.head.bias.clone(),
        })
    }

    pub fn export(&self) -> Result<Vec<u8>> {
        let bn = &self.stem_bn;
        let mut records = vec![
            Record::f32("stem.weight", self.stem_weight.shape(), self.stem_weight.data()),
            Record::f32("stem.bn.gamma", bn.gamma.shape(), bn.gamma.data()),
            Record::f32("stem.bn.beta", bn.beta.shape(), bn.beta.data()),
            Record::f32("stem.bn.running_mean", bn.running_mean.shape(), bn.running_mean.data()),
            Record::f32("stem.bn.running_var", bn.running_var.shape(), bn.running_var.data()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let n = Model::block_name(i);
            let c = [b.out_channels()];
            records.push(Record::u64(format!("{n}.weight_bits"), &b.weights.logical_shape, &b.weights.words));
            records.push(Record::f32(format!("{n}.scale"), &c, &b.affine.scale));
            records.push(Record::f32(format!("{n}.bias"), &c, &b.affine.bias));
        }
        records.push(Record::f32("head.weight", self.head_weight.shape(), self.head_weight.data()));
        records.push(Record::f32("head.bias", self.head_bias.shape(), self.head_bias.data()));
        let meta = json!({
            "kind": "packed_model",
            "model_spec": serde_json::to_value(&self.spec)?,
            "stem_bn_eps": self.stem_bn.eps,
            "bit_order": "lsb-first, 1 = +1, rows padded to 64-bit words",
        });
        write_container(PACKED_MAGIC, meta, &records)
    }

    pub fn import(bytes: &[u8]) -> Result<Self> {
        let (meta, records) = read_container(PACKED_MAGIC, bytes)?;
        let spec: ModelSpec = serde_json::from_value(
            meta.get("model_spec")
                .cloned()
                .ok_or_else(|| Error::Format("packed model has no model_spec".into()))?,
        )?;
        spec.validate()?;
        let tensor = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let r = find(&records, name)?;
            if r.shape != shape {
                return Err(Error::Format(format!("{name}: shape {:?}, expected {shape:?}", r.shape)));
            }
            Tensor::new(r.shape.clone(), r.as_f32()?.to_vec())
        };
        let sc = spec.stem_channels;
        let eps = meta.get("stem_bn_eps").and_then(Value::as_f64).unwrap_or(crate::network::BN_EPS as f64) as f32;
        let mut stem_bn = BatchNorm::new(sc);
        stem_bn.eps = eps;
        stem_bn.gamma = tensor("stem.bn.gamma", &[sc])?;
        stem_bn.beta = tensor("stem.bn.beta", &[sc])?;
        stem_bn.running_mean = tensor("stem.bn.running_mean", &[sc])?;
        stem_bn.running_var = tensor("stem.bn.running_var", &[sc])?;
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        let mut c_in = sc;
        for (i, bs) in spec.blocks.iter().enumerate() {
            let n = Model::block_name(i);
            let shape = [bs.out_channels, c_in, KERNEL, KERNEL];
            let r = find(&records, &format!("{n}.weight_bits"))?;
            let n_valid = c_in * KERNEL * KERNEL;
            let words = r.as_u64()?;
            if r.shape != shape || words.len() != bs.out_channels * words_for(n_valid) {
                return Err(Error::Format(format!("{n}.weight_bits: bad shape or word count")));
            }
            let mask = tail_mask(n_valid);
            let wpr = words_for(n_valid);
            if words.chunks(wpr).any(|row| row[wpr - 1] & !mask != 0) {
                return Err(Error::Format(format!("{n}.weight_bits: padding bits set")));
            }
            let c = [bs.out_channels];
            blocks.push(PackedBlock {
                weights: PackedTensor { logical_shape: shape.to_vec(), n_valid, words: words.to_vec() },
                affine: FoldedAffine {
                    scale: tensor(&format!("{n}.scale"), &c)?.into_data(),
                    bias: tensor(&format!("{n}.bias"), &c)?.into_data(),
                },
                stride: bs.stride,
                shortcut: bs.shortcut,
            });
            c_in = bs.out_channels;
        }
        Ok(Self {
            format_version: crate::container::FORMAT_VERSION,
            stem_weight: tensor("stem.weight", &[sc, spec.in_channels, KERNEL, KERNEL])?,
            stem_bn,
            blocks,
            head_weight: tensor("head.weight", &[spec.num_classes, c_in])?,
            head_bias: tensor("head.bias", &[spec.num_classes])?,
            spec,
        })
    }
}

/// Logits for a `[N, C, H, W]` batch through the packed engine.
pub fn packed_infer(model: &PackedModel, x: &Tensor) -> Result<Tensor> {
    let s = model.spec.image_size;
    if x.ndim() != 4 || x.shape()[1..] != [model.spec.in_channels, s, s] || x.shape()[0] == 0 {
        return Err(Error::shape("packed_infer input", x.shape(), &[0, model.spec.in_channels, s, s]));
    }
    let conv = conv2d(x, &model.stem_weight, 1, PADDING, 0.0)?;
    let mut a = model.stem_bn.forward_eval(&conv)?;
    for b in &model.blocks {
        a = b.forward(&a)?;
    }
    let sh = a.shape().to_vec();
    let inner = sh[2] * sh[3];
    let pooled: Vec<f32> = a
        .data()
        .chunks(inner)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / inner as f64) as f32)
        .collect();
    let pooled = Tensor::new(vec![sh[0], sh[1]], pooled)?;
    let mut logits = pooled.matmul(&model.head_weight.transpose2d()?)?;
    let k = model.head_bias.len();
    for row in logits.data_mut().chunks_mut(k) {
        row.iter_mut().zip(model.head_bias.data()).for_each(|(v, &b)| *v += b);
    }
    Ok(logits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub bytes_fp32: usize,
    pub bytes_packed: usize,
    pub ratio: f64,
}

/// Whole-model serialized sizes: float checkpoint (params + BN buffers) versus
/// the packed container.
pub fn report_sizes(float_model: &Model, packed: &PackedModel) -> Result<SizeReport> {
    let bytes_fp32 = save_model(float_model)?.len();
    let bytes_packed = packed.export()?.len();
    Ok(SizeReport { bytes_fp32, bytes_packed, ratio: bytes_fp32 as f64 / bytes_packed as f64 })
}
