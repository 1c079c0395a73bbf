use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::conv::dot;

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    input.expect_rank("dense input", 2)?;
    weight.expect_rank("dense weight", 2)?;
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let o = weight.shape()[0];
    if weight.shape()[1] != f {
        return Err(Error::dim("dense", "features", f, weight.shape()[1]));
    }
    Ok((n, f, o))
}

/// `input · weightᵀ + bias` for `input: [N, F]`, `weight: [O, F]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f, o) = dims(input, weight)?;
    bias.expect_shape("dense bias", &[o])?;
    let x = input.data();
    let w = weight.data();
    let b = bias.data();
    let mut out = vec![0.0; n * o];
    out.par_chunks_mut(o.max(1)).enumerate().for_each(|(row, dst)| {
        let xr = &x[row * f..][..f];
        for (j, d) in dst.iter_mut().enumerate() {
            let wr = &w[j * f..][..f];
            *d = b[j] + dot(xr, wr);
        }
    });
    Tensor::new(vec![n, o], out)
}

pub fn dense_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    let (n, f, o) = dims(input, weight)?;
    grad_out.expect_shape("dense grad_out", &[n, o])?;
    let x = input.data();
    let w = weight.data();
    let dy = grad_out.data();

    let mut dx = vec![0.0; n * f];
    dx.par_chunks_mut(f.max(1)).enumerate().for_each(|(row, dst)| {
        for j in 0..o {
            let g = dy[row * o + j];
            if g == 0.0 {
                continue;
            }
            for (d, wv) in dst.iter_mut().zip(&w[j * f..][..f]) {
                *d += g * wv;
            }
        }
    });

    let mut dw = vec![0.0; o * f];
    dw.par_chunks_mut(f.max(1)).enumerate().for_each(|(j, dst)| {
        for row in 0..n {
            let g = dy[row * o + j];
            if g == 0.0 {
                continue;
            }
            for (d, xv) in dst.iter_mut().zip(&x[row * f..][..f]) {
                *d += g * xv;
            }
        }
    });

    let db = (0..o).map(|j| (0..n).map(|row| dy[row * o + j]).sum()).collect();

    Ok(DenseGrads {
        input: Tensor::new(vec![n, f], dx)?,
        weight: Tensor::new(vec![o, f], dw)?,
        bias: Tensor::new(vec![o], db)?,
    })
}
