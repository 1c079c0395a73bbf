use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients of a 2D convolution with respect to its three operands.
#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    pad: usize,
    stride: usize,
}

fn out_size(size: usize, k: usize, pad: usize, stride: usize, axis: &str) -> Result<usize> {
    let padded = size + 2 * pad;
    if k > padded {
        return Err(Error::config(format!(
            "conv2d: kernel extent {k} exceeds padded {axis} extent {padded}"
        )));
    }
    if !(padded - k).is_multiple_of(stride) {
        return Err(Error::config(format!(
            "conv2d: non-integer output {axis}: ({size} + 2*{pad} - {k}) / {stride}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

fn geometry(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>, pad: usize, stride: usize) -> Result<Geometry> {
    input.expect_rank("conv2d input", 4)?;
    kernel.expect_rank("conv2d kernel", 4)?;
    if stride == 0 {
        return Err(Error::config("conv2d: stride must be >= 1"));
    }
    let (n, cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (cout, kcin, kh, kw) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]);
    if kcin != cin {
        return Err(Error::dim("conv2d", "channels_in", cin, kcin));
    }
    if let Some(b) = bias {
        b.expect_shape("conv2d bias", &[cout])?;
    }
    let ho = out_size(h, kh, pad, stride, "height")?;
    let wo = out_size(w, kw, pad, stride, "width")?;
    Ok(Geometry { n, cin, h, w, cout, kh, kw, ho, wo, pad, stride })
}

/// Output positions `o` in `[lo, hi)` for which `o * stride + k - pad` lands inside `[0, size)`.
fn valid_range(k: usize, pad: usize, stride: usize, size: usize, out: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if size + pad > k {
        ((size - 1 + pad - k) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfolds one sample `[Cin, H, W]` into `[Cin·kh·kw, Ho·Wo]`; padding cells stay zero.
fn im2col(g: &Geometry, src: &[f64], cols: &mut [f64]) {
    let plane = g.ho * g.wo;
    cols.fill(0.0);
    for ci in 0..g.cin {
        let img = &src[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = valid_range(ky, g.pad, g.stride, g.h, g.ho);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                let row = &mut cols[((ci * g.kh + ky) * g.kw + kx) * plane..][..plane];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    for ox in ox_lo..ox_hi {
                        row[oy * g.wo + ox] = img[iy * g.w + ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
}

/// Inverse scatter of [`im2col`]: accumulates `cols` back into `[Cin, H, W]`.
fn col2im(g: &Geometry, cols: &[f64], dst: &mut [f64]) {
    let plane = g.ho * g.wo;
    for ci in 0..g.cin {
        let img = &mut dst[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = valid_range(ky, g.pad, g.stride, g.h, g.ho);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                let row = &cols[((ci * g.kh + ky) * g.kw + kx) * plane..][..plane];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    for ox in ox_lo..ox_hi {
                        img[iy * g.w + ox * g.stride + kx - g.pad] += row[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four fixed interleaved accumulators.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// 2D cross-correlation with zero padding, NCHW layout.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, padding: usize, stride: usize) -> Result<Tensor> {
    let g = geometry(input, kernel, Some(bias), padding, stride)?;
    let plane = g.ho * g.wo;
    let rows = g.cin * g.kh * g.kw;
    let mut out = vec![0.0; g.n * g.cout * plane];
    let x = input.data();
    let k = kernel.data();
    let b = bias.data();

    out.par_chunks_mut(g.cout * plane).enumerate().for_each_init(
        || vec![0.0; rows * plane],
        |cols, (n, dst)| {
            im2col(&g, &x[n * g.cin * g.h * g.w..][..g.cin * g.h * g.w], cols);
            for co in 0..g.cout {
                let d = &mut dst[co * plane..][..plane];
                d.fill(b[co]);
                let krow = &k[co * rows..][..rows];
                for (r, &wv) in krow.iter().enumerate() {
                    axpy(wv, &cols[r * plane..][..plane], d);
                }
            }
        },
    );
    Tensor::new(vec![g.n, g.cout, g.ho, g.wo], out)
}

/// Backward pass of [`conv2d`]. Per-sample kernel gradients are summed in
/// sample order, so results do not depend on the thread count.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    padding: usize,
    stride: usize,
) -> Result<Conv2dGrads> {
    let g = geometry(input, kernel, None, padding, stride)?;
    grad_out.expect_shape("conv2d grad_out", &[g.n, g.cout, g.ho, g.wo])?;
    let x = input.data();
    let k = kernel.data();
    let dy = grad_out.data();
    let plane = g.ho * g.wo;
    let rows = g.cin * g.kh * g.kw;
    let sample = g.cin * g.h * g.w;

    let mut dx = vec![0.0; input.len()];
    let mut dk_parts = vec![0.0; g.n * kernel.len()];
    dx.par_chunks_mut(sample)
        .zip(dk_parts.par_chunks_mut(kernel.len()))
        .enumerate()
        .for_each_init(
            || (vec![0.0; rows * plane], vec![0.0; rows * plane]),
            |(cols, dcols), (n, (dxn, dkn))| {
                im2col(&g, &x[n * sample..][..sample], cols);
                dcols.fill(0.0);
                let gy = &dy[n * g.cout * plane..][..g.cout * plane];
                for co in 0..g.cout {
                    let grow = &gy[co * plane..][..plane];
                    let krow = &k[co * rows..][..rows];
                    for r in 0..rows {
                        dkn[co * rows + r] = dot(grow, &cols[r * plane..][..plane]);
                        axpy(krow[r], grow, &mut dcols[r * plane..][..plane]);
                    }
                }
                col2im(&g, dcols, dxn);
            },
        );
    let mut dk = vec![0.0; kernel.len()];
    for part in dk_parts.chunks_exact(kernel.len()) {
        for (a, p) in dk.iter_mut().zip(part) {
            *a += p;
        }
    }

    let db: Vec<f64> = (0..g.cout)
        .map(|co| {
            (0..g.n)
                .map(|n| dy[(n * g.cout + co) * plane..][..plane].iter().sum::<f64>())
                .sum()
        })
        .collect();

    Ok(Conv2dGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        kernel: Tensor::new(kernel.shape().to_vec(), dk)?,
        bias: Tensor::new(vec![g.cout], db)?,
    })
}
