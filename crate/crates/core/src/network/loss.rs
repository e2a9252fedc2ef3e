use super::{Model, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() || labels.is_empty() {
        return Err(Error::shape("cross_entropy", logits.shape(), &[labels.len()]));
    }
    let k = logits.shape()[1];
    let n = labels.len();
    let mut grad = vec![0.0f32; n * k];
    let mut total = 0.0f64;
    for (i, (row, &y)) in logits.data().chunks(k).zip(labels).enumerate() {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, classes: k });
        }
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[y] as f64;
        for j in 0..k {
            let p = (row[j] as f64 - lse).exp();
            let t = if j == y { 1.0 } else { 0.0 };
            grad[i * k + j] = ((p - t) / n as f64) as f32;
        }
    }
    Ok(((total / n as f64) as f32, Tensor::new(vec![n, k], grad)?))
}

/// Training-mode forward plus loss; leaves the tape in place for backward.
pub fn forward_loss(model: &mut Model, batch: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let logits = model.forward(batch, Mode::Train)?;
    let (loss, _) = cross_entropy_loss(&logits, labels)?;
    Ok((loss, logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn uniform_logits_give_ln_c() {
        let (l, _) = cross_entropy_loss(&Tensor::zeros(&[3, 10]), &[0, 4, 9]).unwrap();
        assert!((l as f64 - 10f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn confident_logits_give_small_loss() {
        let mut logits = Tensor::zeros(&[2, 5]);
        logits.data_mut()[1] = 50.0;
        logits.data_mut()[5 + 3] = 50.0;
        let (l, _) = cross_entropy_loss(&logits, &[1, 3]).unwrap();
        assert!(l < 1e-3);
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = Rng::new(5);
        let data: Vec<f32> = (0..12).map(|_| rng.uniform_f32(-3.0, 3.0)).collect();
        let logits = Tensor::new(vec![3, 4], data.clone()).unwrap();
        let labels = [2, 0, 3];
        let (l, g) = cross_entropy_loss(&logits, &labels).unwrap();
        let mut oracle = 0.0f64;
        for i in 0..3 {
            let row: Vec<f64> = data[i * 4..i * 4 + 4].iter().map(|&v| v as f64).collect();
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            oracle += -(row[labels[i]].exp() / z).ln();
            for j in 0..4 {
                let p = row[j].exp() / z - if j == labels[i] { 1.0 } else { 0.0 };
                assert!((g.data()[i * 4 + j] as f64 - p / 3.0).abs() < 1e-6);
            }
        }
        assert!((l as f64 - oracle / 3.0).abs() < 1e-6);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            cross_entropy_loss(&Tensor::zeros(&[1, 3]), &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }
}
