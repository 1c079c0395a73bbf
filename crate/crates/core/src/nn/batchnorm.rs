use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Mode;

/// Exponential moving averages of per-channel batch statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Values saved by the forward pass for [`batch_norm2d_backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Per-channel batch normalization over N, H, W.
///
/// Train mode normalizes with the biased batch variance and folds the
/// unbiased variance into the running estimate; eval mode uses the running
/// estimates only.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm2d(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    mode: Mode,
    epsilon: f64,
    momentum: f64,
) -> Result<(Tensor, BatchNormCache)> {
    input.expect_rank("batch_norm2d", 4)?;
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    gamma.expect_shape("batch_norm2d gamma", &[c])?;
    beta.expect_shape("batch_norm2d beta", &[c])?;
    if stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::dim("batch_norm2d running stats", "channels", c, stats.mean.len()));
    }
    let hw = h * w;
    let m = n * hw;
    if mode == Mode::Train && m < 2 {
        return Err(Error::config(format!(
            "batch_norm2d: train mode needs at least 2 values per channel, got {m}"
        )));
    }
    let x = input.data();
    let mut normalized = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];

    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0;
                for ni in 0..n {
                    sum += x[(ni * c + ch) * hw..][..hw].iter().sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut ss = 0.0;
                for ni in 0..n {
                    ss += x[(ni * c + ch) * hw..][..hw].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                }
                let var = ss / m as f64;
                stats.mean[ch] = (1.0 - momentum) * stats.mean[ch] + momentum * mean;
                stats.var[ch] = (1.0 - momentum) * stats.var[ch] + momentum * ss / (m - 1) as f64;
                (mean, var)
            }
            Mode::Eval => (stats.mean[ch], stats.var[ch]),
        };
        let is = 1.0 / (var + epsilon).sqrt();
        inv_std[ch] = is;
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for ni in 0..n {
            let off = (ni * c + ch) * hw;
            for i in off..off + hw {
                let xh = (x[i] - mean) * is;
                normalized[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        BatchNormCache { normalized, inv_std, mode },
    ))
}

pub fn batch_norm2d_backward(cache: &BatchNormCache, gamma: &Tensor, grad_out: &Tensor) -> Result<BatchNormGrads> {
    grad_out.expect_rank("batch_norm2d grad_out", 4)?;
    let [n, c, h, w] = [grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2], grad_out.shape()[3]];
    gamma.expect_shape("batch_norm2d gamma", &[c])?;
    if cache.normalized.len() != grad_out.len() {
        return Err(Error::dim("batch_norm2d backward", "numel", cache.normalized.len(), grad_out.len()));
    }
    let hw = h * w;
    let m = (n * hw) as f64;
    let dy = grad_out.data();
    let xh = &cache.normalized;
    let mut dx = vec![0.0; dy.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];

    for ch in 0..c {
        let (mut sdy, mut sdyx) = (0.0, 0.0);
        for ni in 0..n {
            let off = (ni * c + ch) * hw;
            for i in off..off + hw {
                sdy += dy[i];
                sdyx += dy[i] * xh[i];
            }
        }
        dgamma[ch] = sdyx;
        dbeta[ch] = sdy;
        let g = gamma.data()[ch];
        let is = cache.inv_std[ch];
        for ni in 0..n {
            let off = (ni * c + ch) * hw;
            for i in off..off + hw {
                dx[i] = match cache.mode {
                    Mode::Train => g * is / m * (m * dy[i] - sdy - xh[i] * sdyx),
                    Mode::Eval => g * is * dy[i],
                };
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape().to_vec(), dx)?,
        gamma: Tensor::new(vec![c], dgamma)?,
        beta: Tensor::new(vec![c], dbeta)?,
    })
}
