use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::Mode;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Subgradient at 0 is 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("relu grad_out", input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Inverted dropout. Returns the output and the multiplicative mask applied
/// (`0` or `1/(1-p)` per element); the mask is `None` when the op is the identity.
pub fn dropout(input: &Tensor, p: f64, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("dropout probability must be in [0, 1), got {p}")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((input.clone(), None));
    }
    let scale = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.bernoulli(p) { 0.0 } else { scale })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((Tensor::new(input.shape().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward(grad_out: &Tensor, mask: Option<&[f64]>) -> Tensor {
    match mask {
        None => grad_out.clone(),
        Some(m) => {
            let mut g = grad_out.clone();
            g.data_mut().iter_mut().zip(m).for_each(|(x, s)| *x *= s);
            g
        }
    }
}
