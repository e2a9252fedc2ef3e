use super::{Rng, Tensor};
use crate::error::{Error, Result};

fn fan_in(shape: &[usize], gain: f32, scale_gamma: f32) -> Result<usize> {
    if shape.len() < 2 {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "initializer needs at least 2 dims".into(),
        });
    }
    if !(gain > 0.0) || !(scale_gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gain ({gain}) and scale_gamma ({scale_gamma}) must be > 0"
        )));
    }
    let fan_in: usize = shape[1..].iter().product();
    if fan_in == 0 {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "zero fan_in".into(),
        });
    }
    Ok(fan_in)
}

/// Samples `N(0, (scale_gamma * gain / sqrt(fan_in))^2)`.
///
/// The standard Kaiming draw is produced first and then multiplied by
/// `scale_gamma`, so `kaiming_normal_init(.., g, rng) == kaiming_normal_init(.., 1, rng) * g`
/// bit for bit for the same generator state.
pub fn kaiming_normal_init(shape: &[usize], gain: f32, scale_gamma: f32, rng: &mut Rng) -> Result<Tensor> {
    let fan_in = fan_in(shape, gain, scale_gamma)?;
    let std = gain / (fan_in as f32).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| (rng.standard_normal() * std) * scale_gamma)
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Samples `U(-scale_gamma * bound, scale_gamma * bound)` with `bound = gain * sqrt(3 / fan_in)`.
pub fn kaiming_uniform_init(shape: &[usize], gain: f32, scale_gamma: f32, rng: &mut Rng) -> Result<Tensor> {
    let fan_in = fan_in(shape, gain, scale_gamma)?;
    let bound = gain * (3.0 / fan_in as f32).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| rng.uniform_f32(-bound, bound) * scale_gamma)
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Frobenius norm of every filter `W[k, ..]` along the leading dim.
pub fn filter_norms(w: &Tensor) -> Vec<f64> {
    let c_out = w.shape().first().copied().unwrap_or(0);
    if c_out == 0 {
        return Vec::new();
    }
    let inner = w.len() / c_out;
    if inner == 0 {
        return vec![0.0; c_out];
    }
    w.data()
        .chunks(inner)
        .map(|f| f.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt())
        .collect()
}
