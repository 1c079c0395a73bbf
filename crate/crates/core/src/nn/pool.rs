use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 2×2, stride-2 max pooling. Returns the pooled tensor and, per output
/// element, the flat input index that won. Ties go to the first element in
/// row-major window order.
pub fn max_pool2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    input.expect_rank("max_pool2", 4)?;
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::config(format!("max_pool2 needs even spatial dims, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, argmax))
}

pub fn max_pool2_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::dim("max_pool2 backward", "numel", argmax.len(), grad_out.len()));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_max_and_routing() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = max_pool2_backward(x.shape(), &arg, &Tensor::ones(&[1, 1, 1, 1])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ties_go_to_first() {
        let x = Tensor::full(&[1, 2, 4, 4], 0.7);
        let (y, arg) = max_pool2(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
        let g = max_pool2_backward(x.shape(), &arg, &Tensor::ones(y.shape())).unwrap();
        for plane in 0..2 {
            for iy in 0..4 {
                for ix in 0..4 {
                    let want = if iy % 2 == 0 && ix % 2 == 0 { 1.0 } else { 0.0 };
                    assert_eq!(g.data()[plane * 16 + iy * 4 + ix], want);
                }
            }
        }
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(matches!(max_pool2(&Tensor::zeros(&[1, 1, 3, 4])), Err(Error::Config(_))));
    }
}
