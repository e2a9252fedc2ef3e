//! Binarized conv block: `sign(a) -> binary conv -> * alpha -> BN (-> + shortcut)`.

use super::batchnorm::{BatchNorm, BnCache};
use super::Mode;
use crate::binops::{poly_backward, sign, ste_backward};
use crate::error::{Error, Result};
use crate::tensor::{
    avg_pool2x2, avg_pool2x2_backward, conv2d, conv2d_backward_input, conv2d_backward_weight, Tensor,
};

pub const KERNEL: usize = 3;
pub const PADDING: usize = 1;
/// Padded spatial taps of a binarized activation read `+1` (`sign(0) = +1`).
pub const PAD_VALUE: f32 = 1.0;

/// Trainable state of one binarized conv block.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    /// Latent real weights `[C_out, C_in, 3, 3]`.
    pub weight: Tensor,
    /// One scale per output channel.
    pub alpha: Tensor,
    pub bn: BatchNorm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryBlock {
    pub state: LayerState,
    pub stride: usize,
    pub shortcut: bool,
}

/// Values cached by a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub struct TapeEntry {
    mode: Mode,
    input: Tensor,
    a_bin: Tensor,
    w_bin: Tensor,
    raw: Tensor,
    bn: Option<BnCache>,
}

#[derive(Clone, Debug)]
pub struct BlockGrads {
    pub weight: Tensor,
    pub alpha: Tensor,
    pub bn_gamma: Tensor,
    pub bn_beta: Tensor,
    pub input: Tensor,
}

impl BinaryBlock {
    pub fn in_channels(&self) -> usize {
        self.state.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.state.weight.shape()[0]
    }

    fn check_input(&self, a: &Tensor) -> Result<()> {
        if a.ndim() != 4 || a.shape()[1] != self.in_channels() {
            return Err(Error::shape("block input", a.shape(), self.state.weight.shape()));
        }
        Ok(())
    }

    /// Raw `+/-1` convolution (before alpha) plus the binarized operands.
    fn binary_core(&self, a: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        self.check_input(a)?;
        let a_bin = sign(a)?;
        let w_bin = sign(&self.state.weight)?;
        let raw = conv2d(&a_bin, &w_bin, self.stride, PADDING, PAD_VALUE)?;
        Ok((a_bin, w_bin, raw))
    }

    /// Identity path resampled to the block's output: 2x2 average pool when
    /// strided, zero channels appended when widening.
    pub fn shortcut_forward(&self, a: &Tensor) -> Result<Tensor> {
        shortcut_path(a, self.stride, self.out_channels())
    }

    fn shortcut_backward(&self, grad: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
        let (c_in, c_out) = (self.in_channels(), self.out_channels());
        let s = grad.shape();
        let (n, inner) = (s[0], s[2] * s[3]);
        let narrowed = if c_in == c_out {
            grad.clone()
        } else {
            let mut out = vec![0.0; n * c_in * inner];
            for b in 0..n {
                out[b * c_in * inner..(b + 1) * c_in * inner]
                    .copy_from_slice(&grad.data()[b * c_out * inner..b * c_out * inner + c_in * inner]);
            }
            Tensor::new(vec![n, c_in, s[2], s[3]], out)?
        };
        if self.stride == 2 {
            avg_pool2x2_backward(&narrowed, input_shape)
        } else {
            Ok(narrowed)
        }
    }

    /// Forward pass. Train mode normalizes with batch statistics and updates
    /// the running averages; eval mode reads the running averages only.
    pub fn forward(&mut self, a: &Tensor, mode: Mode) -> Result<(Tensor, TapeEntry)> {
        let (a_bin, w_bin, raw) = self.binary_core(a)?;
        let scaled = raw.scale_channels(self.state.alpha.data())?;
        let (mut y, bn) = match mode {
            Mode::Train => {
                let (y, cache) = self.state.bn.forward_train(&scaled)?;
                (y, Some(cache))
            }
            Mode::Eval => (self.state.bn.forward_eval(&scaled)?, None),
        };
        if self.shortcut {
            y.add_assign(&self.shortcut_forward(a)?)?;
        }
        let tape = TapeEntry {
            mode,
            input: a.clone(),
            a_bin,
            w_bin,
            raw,
            bn,
        };
        Ok((y, tape))
    }

    /// Eval-mode forward without a tape; does not touch the block.
    pub fn forward_eval(&self, a: &Tensor) -> Result<Tensor> {
        let (_, _, raw) = self.binary_core(a)?;
        let scaled = raw.scale_channels(self.state.alpha.data())?;
        let mut y = self.state.bn.forward_eval(&scaled)?;
        if self.shortcut {
            y.add_assign(&self.shortcut_forward(a)?)?;
        }
        Ok(y)
    }

    pub fn backward(&self, tape: TapeEntry, upstream: &Tensor) -> Result<BlockGrads> {
        let cache = match (tape.mode, tape.bn.as_ref()) {
            (Mode::Train, Some(c)) => c,
            _ => return Err(Error::MissingTape("block tape was recorded in eval mode".into())),
        };
        if upstream.shape() != tape.raw.shape() {
            return Err(Error::shape("block backward", upstream.shape(), tape.raw.shape()));
        }
        let (g_scaled, bn_gamma, bn_beta) = self.state.bn.backward(cache, upstream)?;

        let alpha = self.state.alpha.data();
        let c = alpha.len();
        let inner: usize = tape.raw.shape()[2..].iter().product();
        let mut g_alpha = vec![0.0f64; c];
        for (chunk_idx, (g, r)) in g_scaled
            .data()
            .chunks(inner)
            .zip(tape.raw.data().chunks(inner))
            .enumerate()
        {
            g_alpha[chunk_idx % c] += g.iter().zip(r).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>();
        }
        let g_raw = g_scaled.scale_channels(alpha)?;

        let g_wbin = conv2d_backward_weight(
            &tape.a_bin,
            &g_raw,
            self.state.weight.shape(),
            self.stride,
            PADDING,
            PAD_VALUE,
        )?;
        let g_abin = conv2d_backward_input(&g_raw, &tape.w_bin, tape.input.shape(), self.stride, PADDING)?;

        let mut input = poly_backward(&tape.input, &g_abin)?;
        if self.shortcut {
            input.add_assign(&self.shortcut_backward(upstream, tape.input.shape())?)?;
        }
        Ok(BlockGrads {
            weight: ste_backward(&g_wbin),
            alpha: Tensor::from_vec(g_alpha.into_iter().map(|v| v as f32).collect()),
            bn_gamma,
            bn_beta,
            input,
        })
    }
}

/// Parameter-free shortcut: 2x2 average pool when `stride == 2`, then zero-padded
/// extra channels up to `c_out`.
pub fn shortcut_path(a: &Tensor, stride: usize, c_out: usize) -> Result<Tensor> {
    let pooled = if stride == 2 { avg_pool2x2(a)? } else { a.clone() };
    let c_in = pooled.shape()[1];
    if c_in == c_out {
        return Ok(pooled);
    }
    let s = pooled.shape();
    let (n, inner) = (s[0], s[2] * s[3]);
    let mut out = vec![0.0; n * c_out * inner];
    for b in 0..n {
        out[b * c_out * inner..b * c_out * inner + c_in * inner]
            .copy_from_slice(&pooled.data()[b * c_in * inner..(b + 1) * c_in * inner]);
    }
    Tensor::new(vec![n, c_out, s[2], s[3]], out)
}
