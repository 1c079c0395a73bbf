use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean label-smoothed cross-entropy over a batch and its gradient with
/// respect to the logits.
///
/// The target for row `n` is `(1 - smoothing) * onehot(labels[n]) + smoothing / K`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize], smoothing: f64) -> Result<(f64, Tensor)> {
    logits.expect_rank("softmax_cross_entropy", 2)?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::dim("softmax_cross_entropy", "batch", n, labels.len()));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::config(format!("label smoothing must be in [0, 1), got {smoothing}")));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::LabelOutOfRange { index, label, classes: k });
    }
    if n == 0 {
        return Ok((0.0, Tensor::zeros(&[0, k])));
    }
    let off = smoothing / k as f64;
    let on = 1.0 - smoothing + off;
    let z = logits.data();
    let mut grad = vec![0.0; n * k];
    let mut total = 0.0;
    for (row, &label) in labels.iter().enumerate() {
        let zr = &z[row * k..][..k];
        let max = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = zr.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum_exp.ln();
        let mut loss = 0.0;
        for (j, &v) in zr.iter().enumerate() {
            let q = if j == label { on } else { off };
            let logp = v - log_norm;
            loss -= q * logp;
            grad[row * k + j] = (logp.exp() - q) / n as f64;
        }
        total += loss;
    }
    Ok((total / n as f64, Tensor::new(vec![n, k], grad)?))
}
