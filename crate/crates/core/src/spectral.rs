//! Frequency-domain view of convolution kernels.
//!
//! Kernels are at most a few cells wide, so the 2D DFT is evaluated directly
//! from its definition `X[u,v] = Σ_y Σ_x k[y,x]·exp(−2πi(uy/H + vx/W))`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Uncentered magnitude `|DFT2(kernel)|` of a row-major `rows × cols` array.
pub fn dft2_magnitude(kernel: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if rows == 0 || cols == 0 {
        return Err(Error::config("dft2_magnitude needs a non-empty kernel"));
    }
    if kernel.len() != rows * cols {
        return Err(Error::dim("dft2_magnitude", "numel", rows * cols, kernel.len()));
    }
    if let Some(index) = kernel.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index,
            context: "kernel value".into(),
        });
    }
    let mut out = Vec::with_capacity(rows * cols);
    for u in 0..rows {
        for v in 0..cols {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..rows {
                for x in 0..cols {
                    // reduce the phase index first so the angle stays in [0, 4π)
                    let theta = 2.0 * PI * ((u * y % rows) as f64 / rows as f64 + (v * x % cols) as f64 / cols as f64);
                    let k = kernel[y * cols + x];
                    re += k * theta.cos();
                    im -= k * theta.sin();
                }
            }
            out.push(re.hypot(im));
        }
    }
    Ok(out)
}

/// Moves the DC cell of an uncentered grid to `(rows/2, cols/2)` (floor division).
pub fn center_shift(grid: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for u in 0..rows {
        for v in 0..cols {
            out[((u + rows / 2) % rows) * cols + (v + cols / 2) % cols] = grid[u * cols + v];
        }
    }
    out
}

/// Channel-averaged, centered magnitude spectrum of one convolution layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpectrum {
    pub layer_name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`, DC at `(rows/2, cols/2)`.
    pub grid: Vec<f64>,
    /// `(Cout, Cin, kh, kw)`.
    pub kernel_shape: [usize; 4],
    pub dc_fraction: f64,
}

impl FilterSpectrum {
    pub fn center(&self) -> (usize, usize) {
        (self.rows / 2, self.cols / 2)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.cols + col]
    }

    /// Grid rows as CSV, then `dc_fraction=` and `low_frequency_ratio_r1=` lines.
    pub fn to_csv(&self) -> String {
        let [co, ci, kh, kw] = self.kernel_shape;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# layer={} kernel_shape={co}x{ci}x{kh}x{kw} scale=linear dc=({},{})",
            self.layer_name,
            self.rows / 2,
            self.cols / 2
        );
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| self.at(r, c).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        let _ = writeln!(out, "dc_fraction={}", self.dc_fraction);
        let _ = writeln!(out, "low_frequency_ratio_r1={}", low_frequency_ratio(self, 1.0));
        out
    }

    /// Parses the output of [`FilterSpectrum::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::config(format!("spectrum csv: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        let field = |key: &str| -> Option<&str> {
            header
                .trim_start_matches('#')
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
        };
        let layer_name = field("layer").ok_or_else(|| bad("missing layer"))?.to_string();
        let dims: Vec<usize> = field("kernel_shape")
            .ok_or_else(|| bad("missing kernel_shape"))?
            .split('x')
            .map(|d| d.parse().map_err(|_| bad("bad kernel_shape")))
            .collect::<Result<_>>()?;
        if dims.len() != 4 {
            return Err(bad("kernel_shape must have 4 dims"));
        }
        let mut grid = Vec::new();
        let mut rows = 0;
        let mut dc_fraction = None;
        for line in lines {
            if let Some(v) = line.strip_prefix("dc_fraction=") {
                dc_fraction = Some(v.parse::<f64>().map_err(|_| bad("bad dc_fraction"))?);
            } else if line.contains('=') || line.trim().is_empty() {
                continue;
            } else {
                for cell in line.split(',') {
                    grid.push(cell.trim().parse::<f64>().map_err(|_| bad("bad grid value"))?);
                }
                rows += 1;
            }
        }
        if rows != dims[2] || grid.len() != dims[2] * dims[3] {
            return Err(bad("grid size does not match kernel_shape"));
        }
        Ok(Self {
            layer_name,
            rows,
            cols: dims[3],
            grid,
            kernel_shape: [dims[0], dims[1], dims[2], dims[3]],
            dc_fraction: dc_fraction.ok_or_else(|| bad("missing dc_fraction"))?,
        })
    }
}

fn energy_fraction(grid: &[f64], select: impl Fn(usize) -> bool) -> f64 {
    let total: f64 = grid.iter().map(|m| m * m).sum();
    if total == 0.0 {
        return 0.0;
    }
    let part: f64 = grid.iter().enumerate().filter(|(i, _)| select(*i)).map(|(_, m)| m * m).sum();
    (part / total).clamp(0.0, 1.0)
}

/// Mean of the per-slice magnitude spectra over all `Cout × Cin` slices of a
/// `[Cout, Cin, kh, kw]` kernel tensor, centered.
pub fn average_channel_spectrum(layer_name: &str, kernel: &Tensor) -> Result<FilterSpectrum> {
    kernel.expect_rank("average_channel_spectrum", 4)?;
    let [co, ci, kh, kw] = [kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]];
    let slices = co * ci;
    if slices == 0 {
        return Err(Error::config("average_channel_spectrum needs at least one slice"));
    }
    let plane = kh * kw;
    let mut sum = vec![0.0; plane];
    for s in 0..slices {
        let mag = dft2_magnitude(&kernel.data()[s * plane..][..plane], kh, kw)?;
        for (acc, m) in sum.iter_mut().zip(mag) {
            *acc += m;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / slices as f64).collect();
    let grid = center_shift(&mean, kh, kw);
    let dc = (kh / 2) * kw + kw / 2;
    let dc_fraction = energy_fraction(&grid, |i| i == dc);
    Ok(FilterSpectrum {
        layer_name: layer_name.to_string(),
        rows: kh,
        cols: kw,
        grid,
        kernel_shape: [co, ci, kh, kw],
        dc_fraction,
    })
}

/// Share of squared magnitude within Euclidean distance `radius` (in cells) of
/// the centered DC cell. Zero for an all-zero spectrum.
pub fn low_frequency_ratio(spectrum: &FilterSpectrum, radius: f64) -> f64 {
    let (cr, cc) = spectrum.center();
    let cols = spectrum.cols;
    let r2 = radius.max(0.0) * radius.max(0.0);
    energy_fraction(&spectrum.grid, |i| {
        let dr = (i / cols) as f64 - cr as f64;
        let dc = (i % cols) as f64 - cc as f64;
        dr * dr + dc * dc <= r2
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn constant_kernel() {
        let c = -0.37;
        let mag = dft2_magnitude(&[c; 9], 3, 3).unwrap();
        assert!((mag[0] - 9.0 * c.abs()).abs() < 1e-12);
        assert!(mag[1..].iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn impulse_is_flat() {
        for pos in [0, 4, 7] {
            let mut k = [0.0; 9];
            k[pos] = 1.0;
            let mag = dft2_magnitude(&k, 3, 3).unwrap();
            assert!(mag.iter().all(|m| (m - 1.0).abs() < 1e-15), "{mag:?}");
        }
    }

    #[test]
    fn sign_invariance_bitwise() {
        let k: Vec<f64> = Tensor::uniform(&[5, 5], -1.0, 1.0, &mut Rng::new(3)).into_data();
        let neg: Vec<f64> = k.iter().map(|v| -v).collect();
        let a = dft2_magnitude(&k, 5, 5).unwrap();
        let b = dft2_magnitude(&neg, 5, 5).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(dft2_magnitude(&[0.0, f64::INFINITY], 1, 2), Err(Error::NonFinite { index: 1, .. })));
    }

    #[test]
    fn shift_puts_dc_at_floor_center() {
        for (r, c) in [(3, 3), (4, 4), (2, 5)] {
            let mut g = vec![0.0; r * c];
            g[0] = 1.0;
            let s = center_shift(&g, r, c);
            assert_eq!(s[(r / 2) * c + c / 2], 1.0);
        }
    }

    #[test]
    fn identical_and_sign_flipped_slices() {
        let c = 0.5;
        let mut data = vec![c; 9];
        data.extend(vec![-c; 9]);
        let t = Tensor::new(vec![2, 1, 3, 3], data).unwrap();
        let s = average_channel_spectrum("conv", &t).unwrap();
        assert!((s.at(1, 1) - 9.0 * c).abs() < 1e-12);
        assert!((s.dc_fraction - 1.0).abs() < 1e-12);
        let single = average_channel_spectrum("conv", &Tensor::new(vec![1, 1, 3, 3], vec![c; 9]).unwrap()).unwrap();
        assert_eq!(s.grid, single.grid);
    }

    #[test]
    fn wrong_rank() {
        assert!(average_channel_spectrum("x", &Tensor::zeros(&[3, 3])).is_err());
    }

    #[test]
    fn ratio_limits() {
        let t = Tensor::uniform(&[4, 2, 3, 3], -1.0, 1.0, &mut Rng::new(1));
        let s = average_channel_spectrum("conv", &t).unwrap();
        assert_eq!(low_frequency_ratio(&s, 0.0), s.dc_fraction);
        assert_eq!(low_frequency_ratio(&s, 8f64.sqrt()), 1.0);
        let sweep: Vec<f64> = (0..30).map(|i| low_frequency_ratio(&s, i as f64 * 0.1)).collect();
        assert!(sweep.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn csv_round_trip() {
        let t = Tensor::uniform(&[4, 2, 3, 3], -1.0, 1.0, &mut Rng::new(1));
        let s = average_channel_spectrum("conv1.weight", &t).unwrap();
        let back = FilterSpectrum::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back, s);
    }
}
