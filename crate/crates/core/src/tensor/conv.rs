//! im2col convolution primitives over `[N, C, H, W]` tensors.

use super::Tensor;
use crate::error::{Error, Result};

/// `c = a * b + beta * c` for row-major `a: [m, k]`, `b: [k, n]`, `c: [m, n]`.
/// `a_t` / `b_t` mean the operand is stored transposed (`[k, m]` / `[n, k]`).
#[allow(clippy::too_many_arguments)]
pub fn matmul_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index sgemm touches for these strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 || input[1] != weight[1] {
            return Err(Error::shape("conv2d", input, weight));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
        }
        let g = Self {
            in_c: input[1],
            in_h: input[2],
            in_w: input[3],
            k_h: weight[2],
            k_w: weight[3],
            stride,
            pad,
        };
        if g.in_h + 2 * pad < g.k_h || g.in_w + 2 * pad < g.k_w {
            return Err(Error::shape("conv2d (kernel larger than padded input)", input, weight));
        }
        Ok(g)
    }

    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.k_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.k_w) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * self.k_h * self.k_w
    }

    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Input coordinate of kernel tap `(ki, kj)` at output `(oy, ox)`, or `None` inside the padding.
    #[inline]
    pub fn source(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ki) as isize - self.pad as isize;
        let x = (ox * self.stride + kj) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.in_h as isize || x >= self.in_w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }
}

/// Unfolds one `[C, H, W]` sample into `[C*KH*KW, OH*OW]`; padded taps read `pad_value`.
pub fn im2col(sample: &[f32], g: &Conv2dGeometry, pad_value: f32, cols: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    debug_assert_eq!(cols.len(), g.patch_len() * p);
    for c in 0..g.in_c {
        let plane = &sample[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.k_h {
            for kj in 0..g.k_w {
                let row = (c * g.k_h + ki) * g.k_w + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    for ox in 0..ow {
                        dst[oy * ow + ox] = match g.source(oy, ox, ki, kj) {
                            Some((y, x)) => plane[y * g.in_w + x],
                            None => pad_value,
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a `[C, H, W]` sample (padding dropped).
pub fn col2im(cols: &[f32], g: &Conv2dGeometry, sample: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for c in 0..g.in_c {
        for ki in 0..g.k_h {
            for kj in 0..g.k_w {
                let row = (c * g.k_h + ki) * g.k_w + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    for ox in 0..ow {
                        if let Some((y, x)) = g.source(oy, ox, ki, kj) {
                            sample[(c * g.in_h + y) * g.in_w + x] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `[N, C, H, W]` with `[O, C, KH, KW]`; padded positions read `pad_value`.
pub fn conv2d(input: &Tensor, weight: &Tensor, stride: usize, pad: usize, pad_value: f32) -> Result<Tensor> {
    let g = Conv2dGeometry::new(input.shape(), weight.shape(), stride, pad)?;
    let n = input.shape()[0];
    let o = weight.shape()[0];
    let (k, p) = (g.patch_len(), g.positions());
    let in_len = g.in_c * g.in_h * g.in_w;
    let mut cols = vec![0.0; k * p];
    let mut out = vec![0.0; n * o * p];
    for s in 0..n {
        im2col(&input.data()[s * in_len..(s + 1) * in_len], &g, pad_value, &mut cols);
        matmul_into(o, k, p, weight.data(), false, &cols, false, &mut out[s * o * p..(s + 1) * o * p], 0.0);
    }
    Tensor::new(vec![n, o, g.out_h(), g.out_w()], out)
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_backward_input(
    grad_out: &Tensor,
    weight: &Tensor,
    input_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = Conv2dGeometry::new(input_shape, weight.shape(), stride, pad)?;
    let n = input_shape[0];
    let o = weight.shape()[0];
    let (k, p) = (g.patch_len(), g.positions());
    if grad_out.shape() != [n, o, g.out_h(), g.out_w()] {
        return Err(Error::shape("conv2d_backward_input", grad_out.shape(), &[n, o, g.out_h(), g.out_w()]));
    }
    let in_len = g.in_c * g.in_h * g.in_w;
    let mut cols = vec![0.0; k * p];
    let mut out = vec![0.0; n * in_len];
    for s in 0..n {
        // cols = W^T [k, o] * grad [o, p]
        matmul_into(k, o, p, weight.data(), true, &grad_out.data()[s * o * p..(s + 1) * o * p], false, &mut cols, 0.0);
        col2im(&cols, &g, &mut out[s * in_len..(s + 1) * in_len]);
    }
    Tensor::new(input_shape.to_vec(), out)
}

/// Gradient of [`conv2d`] with respect to its weight.
pub fn conv2d_backward_weight(
    input: &Tensor,
    grad_out: &Tensor,
    weight_shape: &[usize],
    stride: usize,
    pad: usize,
    pad_value: f32,
) -> Result<Tensor> {
    let g = Conv2dGeometry::new(input.shape(), weight_shape, stride, pad)?;
    let n = input.shape()[0];
    let o = weight_shape[0];
    let (k, p) = (g.patch_len(), g.positions());
    if grad_out.shape() != [n, o, g.out_h(), g.out_w()] {
        return Err(Error::shape("conv2d_backward_weight", grad_out.shape(), &[n, o, g.out_h(), g.out_w()]));
    }
    let in_len = g.in_c * g.in_h * g.in_w;
    let mut cols = vec![0.0; k * p];
    let mut gw = vec![0.0; o * k];
    for s in 0..n {
        im2col(&input.data()[s * in_len..(s + 1) * in_len], &g, pad_value, &mut cols);
        // gw[o, k] += grad [o, p] * cols^T [p, k]
        matmul_into(o, p, k, &grad_out.data()[s * o * p..(s + 1) * o * p], false, &cols, true, &mut gw, 1.0);
    }
    Tensor::new(weight_shape.to_vec(), gw)
}

/// Non-overlapping 2x2 average pooling; H and W must be even.
pub fn avg_pool2x2(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "avg_pool2x2 needs [N, C, even H, even W]".into(),
        });
    }
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for pl in 0..planes {
        let src = &input.data()[pl * h * w..(pl + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let a = src[2 * y * w + 2 * x] + src[2 * y * w + 2 * x + 1];
                let b = src[(2 * y + 1) * w + 2 * x] + src[(2 * y + 1) * w + 2 * x + 1];
                out[pl * oh * ow + y * ow + x] = (a + b) * 0.25;
            }
        }
    }
    Tensor::new(vec![s[0], s[1], oh, ow], out)
}

pub fn avg_pool2x2_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let (planes, h, w) = (input_shape[0] * input_shape[1], input_shape[2], input_shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    if grad_out.shape() != [input_shape[0], input_shape[1], oh, ow] {
        return Err(Error::shape("avg_pool2x2_backward", grad_out.shape(), input_shape));
    }
    let mut out = vec![0.0; planes * h * w];
    for pl in 0..planes {
        for y in 0..h {
            for x in 0..w {
                out[pl * h * w + y * w + x] = grad_out.data()[pl * oh * ow + (y / 2) * ow + x / 2] * 0.25;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), out)
}
