//! Small binarized conv nets with a hand-written backward pass.
//!
//! Every model is `stem -> binarized blocks -> global average pool -> linear head`.
//! The stem (3x3 conv + BN) and the head stay full precision.

mod batchnorm;
mod block;
mod checkpoint;
mod loss;

pub use batchnorm::{BatchNorm, BnCache, BN_EPS, BN_MOMENTUM};
pub use block::{shortcut_path, BinaryBlock, BlockGrads, LayerState, TapeEntry, KERNEL, PADDING, PAD_VALUE};
pub use checkpoint::{model_from_records, model_records, save_model, Checkpoint};
pub use loss::{cross_entropy_loss, forward_loss};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    conv2d, conv2d_backward_weight, filter_norms, kaiming_normal_init, kaiming_uniform_init, Rng, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Role of a parameter tensor; decides which optimizer rules apply to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    BinarizedWeight,
    FullPrecision,
    ScaleAlpha,
    BnAffine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    KaimingNormal,
    KaimingUniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    #[serde(default)]
    pub kind: InitKind,
    /// Multiplier on the binarized-block weights only.
    #[serde(default = "one")]
    pub scale_gamma: f32,
}

fn one() -> f32 {
    1.0
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            kind: InitKind::KaimingNormal,
            scale_gamma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub out_channels: usize,
    pub stride: usize,
    #[serde(default = "yes")]
    pub shortcut: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub in_channels: usize,
    /// Square input side length.
    pub image_size: usize,
    pub num_classes: usize,
    pub stem_channels: usize,
    pub blocks: Vec<BlockSpec>,
    #[serde(default)]
    pub init: InitSpec,
}

impl ModelSpec {
    /// MNIST-scale: 4 binarized blocks with 16, 32, 64, 64 output channels.
    pub fn toy_conv_net() -> Self {
        Self {
            name: "toy".into(),
            in_channels: 1,
            image_size: 28,
            num_classes: 10,
            stem_channels: 16,
            blocks: vec![
                BlockSpec { out_channels: 16, stride: 1, shortcut: true },
                BlockSpec { out_channels: 32, stride: 2, shortcut: true },
                BlockSpec { out_channels: 64, stride: 2, shortcut: true },
                BlockSpec { out_channels: 64, stride: 1, shortcut: true },
            ],
            init: InitSpec::default(),
        }
    }

    /// CIFAR-scale: 3 stages x 2 blocks at 16, 32, 64 channels.
    pub fn mini_res() -> Self {
        let mut blocks = Vec::new();
        for (i, c) in [16usize, 32, 64].into_iter().enumerate() {
            blocks.push(BlockSpec { out_channels: c, stride: if i == 0 { 1 } else { 2 }, shortcut: true });
            blocks.push(BlockSpec { out_channels: c, stride: 1, shortcut: true });
        }
        Self {
            name: "minires".into(),
            in_channels: 3,
            image_size: 32,
            num_classes: 10,
            stem_channels: 16,
            blocks,
            init: InitSpec::default(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "toy" | "toyconvnet" | "ToyConvNet" => Some(Self::toy_conv_net()),
            "minires" | "MiniRes" => Some(Self::mini_res()),
            _ => None,
        }
    }

    pub fn with_scale_gamma(mut self, gamma: f32) -> Self {
        self.init.scale_gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("model spec {}: {m}", self.name)));
        if self.in_channels == 0 || self.num_classes == 0 || self.stem_channels == 0 {
            return bad("channel and class counts must be positive".into());
        }
        if !(self.init.scale_gamma > 0.0) {
            return bad("scale_gamma must be > 0".into());
        }
        let mut size = self.image_size;
        let mut c = self.stem_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.stride != 1 && b.stride != 2 {
                return bad(format!("block {} stride must be 1 or 2", i + 1));
            }
            if b.stride == 2 && size % 2 != 0 {
                return bad(format!("block {} downsamples odd size {size}", i + 1));
            }
            if b.shortcut && b.out_channels < c {
                return bad(format!("block {} shortcut cannot narrow {c} -> {}", i + 1, b.out_channels));
            }
            size /= b.stride;
            c = b.out_channels;
        }
        if size == 0 {
            return bad("spatial size collapses to zero".into());
        }
        Ok(())
    }

    pub fn final_channels(&self) -> usize {
        self.blocks.last().map_or(self.stem_channels, |b| b.out_channels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stem {
    pub weight: Tensor,
    pub bn: BatchNorm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    /// `[num_classes, C]`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
struct ModelTape {
    input_shape: Vec<usize>,
    input: Tensor,
    stem_bn: BnCache,
    blocks: Vec<TapeEntry>,
    pooled: Tensor,
    last_shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub stem: Stem,
    pub blocks: Vec<BinaryBlock>,
    pub head: Head,
    tape: Option<ModelTape>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.stem == other.stem && self.blocks == other.blocks && self.head == other.head
    }
}

/// Builds and initializes a model. Draw order: stem, blocks in order, head.
pub fn build_model(spec: &ModelSpec, rng: &mut Rng) -> Result<Model> {
    spec.validate()?;
    let init = |shape: &[usize], gain: f32, gamma: f32, rng: &mut Rng| match spec.init.kind {
        InitKind::KaimingNormal => kaiming_normal_init(shape, gain, gamma, rng),
        InitKind::KaimingUniform => kaiming_uniform_init(shape, gain, gamma, rng),
    };
    let relu_gain = 2f32.sqrt();
    let stem = Stem {
        weight: init(&[spec.stem_channels, spec.in_channels, KERNEL, KERNEL], relu_gain, 1.0, rng)?,
        bn: BatchNorm::new(spec.stem_channels),
    };
    let mut blocks = Vec::with_capacity(spec.blocks.len());
    let mut c_in = spec.stem_channels;
    for b in &spec.blocks {
        blocks.push(BinaryBlock {
            state: LayerState {
                weight: init(&[b.out_channels, c_in, KERNEL, KERNEL], relu_gain, spec.init.scale_gamma, rng)?,
                alpha: Tensor::full(&[b.out_channels], 1.0),
                bn: BatchNorm::new(b.out_channels),
            },
            stride: b.stride,
            shortcut: b.shortcut,
        });
        c_in = b.out_channels;
    }
    let head = Head {
        weight: init(&[spec.num_classes, c_in], 1.0, 1.0, rng)?,
        bias: Tensor::zeros(&[spec.num_classes]),
    };
    Ok(Model {
        spec: spec.clone(),
        stem,
        blocks,
        head,
        tape: None,
    })
}

fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    let (n, c, inner) = (s[0], s[1], s[2] * s[3]);
    let data = x
        .data()
        .chunks(inner)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / inner as f64) as f32)
        .collect();
    Tensor::new(vec![n, c], data)
}

fn linear(x: &Tensor, head: &Head) -> Result<Tensor> {
    let mut out = x.matmul(&head.weight.transpose2d()?)?;
    let k = head.bias.len();
    for row in out.data_mut().chunks_mut(k) {
        for (v, &b) in row.iter_mut().zip(head.bias.data()) {
            *v += b;
        }
    }
    Ok(out)
}

impl Model {
    pub fn block_name(i: usize) -> String {
        format!("block{}", i + 1)
    }

    /// Name of the deepest binarized weight tensor.
    pub fn deepest_binarized(&self) -> Option<String> {
        (!self.blocks.is_empty()).then(|| format!("{}.weight", Self::block_name(self.blocks.len() - 1)))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = self.spec.image_size;
        if x.ndim() != 4 || x.shape()[1..] != [self.spec.in_channels, s, s] || x.shape()[0] == 0 {
            return Err(Error::shape("model input", x.shape(), &[0, self.spec.in_channels, s, s]));
        }
        Ok(())
    }

    /// Training-mode forward; records the tape consumed by [`Model::backward`].
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let conv = conv2d(x, &self.stem.weight, 1, PADDING, 0.0)?;
        let (mut a, stem_bn) = self.stem.bn.forward_train(&conv)?;
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let (y, tape) = b.forward(&a, Mode::Train)?;
            tapes.push(tape);
            a = y;
        }
        let pooled = global_avg_pool(&a)?;
        let logits = linear(&pooled, &self.head)?;
        self.tape = Some(ModelTape {
            input_shape: x.shape().to_vec(),
            input: x.clone(),
            stem_bn,
            blocks: tapes,
            pooled,
            last_shape: a.shape().to_vec(),
        });
        Ok(logits)
    }

    /// Eval-mode forward; per-sample results do not depend on the batch.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let conv = conv2d(x, &self.stem.weight, 1, PADDING, 0.0)?;
        let mut a = self.stem.bn.forward_eval(&conv)?;
        for b in &self.blocks {
            a = b.forward_eval(&a)?;
        }
        linear(&global_avg_pool(&a)?, &self.head)
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Eval => self.forward_eval(x),
        }
    }

    /// Backward from `dL/dlogits`; gradients follow [`Model::param_info`] order.
    /// Consumes the tape.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::MissingTape("no training-mode forward recorded".into()))?;
        let n = tape.input_shape[0];
        let k = self.spec.num_classes;
        if grad_logits.shape() != [n, k] {
            return Err(Error::shape("model backward", grad_logits.shape(), &[n, k]));
        }
        // head
        let g_head_w = grad_logits.transpose2d()?.matmul(&tape.pooled)?;
        let mut g_head_b = vec![0.0f64; k];
        for row in grad_logits.data().chunks(k) {
            for (acc, &g) in g_head_b.iter_mut().zip(row) {
                *acc += g as f64;
            }
        }
        let g_pooled = grad_logits.matmul(&self.head.weight)?;
        let s = &tape.last_shape;
        let inner = s[2] * s[3];
        let mut g = Tensor::new(
            s.clone(),
            g_pooled
                .data()
                .iter()
                .flat_map(|&v| std::iter::repeat(v / inner as f32).take(inner))
                .collect(),
        )?;

        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (b, t) in self.blocks.iter().zip(tape.blocks).rev() {
            let bg = b.backward(t, &g)?;
            g = bg.input.clone();
            block_grads.push(bg);
        }
        block_grads.reverse();

        let (g_conv, g_sg, g_sb) = self.stem.bn.backward(&tape.stem_bn, &g)?;
        let g_stem_w = conv2d_backward_weight(&tape.input, &g_conv, self.stem.weight.shape(), 1, PADDING, 0.0)?;

        let mut grads = vec![g_stem_w, g_sg, g_sb];
        for bg in block_grads {
            grads.extend([bg.weight, bg.alpha, bg.bn_gamma, bg.bn_beta]);
        }
        grads.push(g_head_w);
        grads.push(Tensor::from_vec(g_head_b.into_iter().map(|v| v as f32).collect()));
        Ok(grads)
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    pub fn param_info(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        let mut push = |name: String, kind, t: &Tensor| out.push(ParamInfo { name, kind, shape: t.shape().to_vec() });
        push("stem.weight".into(), ParamKind::FullPrecision, &self.stem.weight);
        push("stem.bn.gamma".into(), ParamKind::BnAffine, &self.stem.bn.gamma);
        push("stem.bn.beta".into(), ParamKind::BnAffine, &self.stem.bn.beta);
        for (i, b) in self.blocks.iter().enumerate() {
            let n = Self::block_name(i);
            push(format!("{n}.weight"), ParamKind::BinarizedWeight, &b.state.weight);
            push(format!("{n}.alpha"), ParamKind::ScaleAlpha, &b.state.alpha);
            push(format!("{n}.bn.gamma"), ParamKind::BnAffine, &b.state.bn.gamma);
            push(format!("{n}.bn.beta"), ParamKind::BnAffine, &b.state.bn.beta);
        }
        push("head.weight".into(), ParamKind::FullPrecision, &self.head.weight);
        push("head.bias".into(), ParamKind::FullPrecision, &self.head.bias);
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.stem.weight, &self.stem.bn.gamma, &self.stem.bn.beta];
        for b in &self.blocks {
            v.extend([&b.state.weight, &b.state.alpha, &b.state.bn.gamma, &b.state.bn.beta]);
        }
        v.extend([&self.head.weight, &self.head.bias]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.stem.weight, &mut self.stem.bn.gamma, &mut self.stem.bn.beta];
        for b in &mut self.blocks {
            let s = &mut b.state;
            v.extend([&mut s.weight, &mut s.alpha, &mut s.bn.gamma, &mut s.bn.beta]);
        }
        v.extend([&mut self.head.weight, &mut self.head.bias]);
        v
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.param_info()
            .iter()
            .position(|p| p.name == name)
            .map(|i| self.params()[i])
    }

    /// BN running statistics, named like parameters.
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![
            ("stem.bn.running_mean".to_string(), &self.stem.bn.running_mean),
            ("stem.bn.running_var".to_string(), &self.stem.bn.running_var),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let n = Self::block_name(i);
            v.push((format!("{n}.bn.running_mean"), &b.state.bn.running_mean));
            v.push((format!("{n}.bn.running_var"), &b.state.bn.running_var));
        }
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.stem.bn.running_mean, &mut self.stem.bn.running_var];
        for b in &mut self.blocks {
            v.extend([&mut b.state.bn.running_mean, &mut b.state.bn.running_var]);
        }
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Multiplies every binarized-block latent weight by `gamma`.
    pub fn scale_binarized_weights(&mut self, gamma: f32) {
        for b in &mut self.blocks {
            b.state.weight.scale_assign(gamma);
        }
    }

    pub fn scale_alphas(&mut self, gamma: f32) {
        for b in &mut self.blocks {
            b.state.alpha.scale_assign(gamma);
        }
    }

    pub fn binarized_filter_norms(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().map(|b| filter_norms(&b.state.weight)).collect()
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward_eval(x)?;
        Ok(argmax_rows(&logits))
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
