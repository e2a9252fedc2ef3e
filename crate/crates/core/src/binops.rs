//! Binarization kernels in float-simulation form.
//!
//! `sign` maps `x >= 0` to `+1` and everything else to `-1`. Latent weights
//! take the identity straight-through gradient; activations take the
//! piecewise-polynomial estimator `F'(a) = 2 + 2a` on `[-1, 0)`, `2 - 2a` on
//! `[0, 1)` and zero elsewhere.

use crate::error::{Error, Result};
use crate::tensor::{conv2d, Tensor};

/// Gradient estimator for the non-differentiable `sign`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinGradKind {
    SteIdentity,
    PolyApprox,
}

impl BinGradKind {
    /// Latent weights always use the identity estimator.
    pub const WEIGHTS: BinGradKind = BinGradKind::SteIdentity;
    /// Activations always use the polynomial estimator.
    pub const ACTIVATIONS: BinGradKind = BinGradKind::PolyApprox;

    pub fn backward(self, pre_sign: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        match self {
            BinGradKind::SteIdentity => Ok(ste_backward(upstream)),
            BinGradKind::PolyApprox => poly_backward(pre_sign, upstream),
        }
    }
}

#[inline]
pub fn sign_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn sign(x: &Tensor) -> Result<Tensor> {
    if let Some(i) = x.data().iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            context: "sign".into(),
            index: i,
            value: f32::NAN,
        });
    }
    Ok(x.map(sign_scalar))
}

pub fn ste_backward(upstream: &Tensor) -> Tensor {
    upstream.clone()
}

#[inline]
pub fn poly_grad(a: f32) -> f32 {
    if (-1.0..0.0).contains(&a) {
        2.0 + 2.0 * a
    } else if (0.0..1.0).contains(&a) {
        2.0 - 2.0 * a
    } else {
        0.0
    }
}

pub fn poly_backward(a: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    a.zip_map(upstream, "poly_backward", |a, g| g * poly_grad(a))
}

fn is_pm_one(t: &Tensor) -> bool {
    t.data().iter().all(|&v| v == 1.0 || v == -1.0)
}

/// Cross-correlation of `+/-1` tensors with output channel `k` scaled by `alpha[k]`.
/// Spatial padding reads `+1`, the binarized value of a zero activation.
pub fn binary_conv_forward(
    a_bin: &Tensor,
    w_bin: &Tensor,
    alpha: &[f32],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    if !is_pm_one(a_bin) || !is_pm_one(w_bin) {
        return Err(Error::InvalidArgument(
            "binary_conv_forward expects tensors of +1/-1 only".into(),
        ));
    }
    if w_bin.shape().first() != Some(&alpha.len()) {
        return Err(Error::shape("binary_conv_forward alpha", w_bin.shape(), &[alpha.len()]));
    }
    let raw = conv2d(a_bin, w_bin, stride, padding, 1.0)?;
    raw.scale_channels(alpha)
}
