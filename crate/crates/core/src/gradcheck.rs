//! Central finite-difference checks of analytic gradients, plus a fixed suite
//! that exercises every backward pass in [`crate::nn`] and the density penalty.

use crate::density::{self, Binning, EnergyConfig};
use crate::error::{Error, Result};
use crate::nn::{self, Mode, RunningStats};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Floor on the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate that produced `max_rel_error`.
    pub worst_index: usize,
    pub coords_checked: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient returned by `f` at `x` with central
/// differences `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` on every coordinate.
pub fn gradient_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    gradient_check_masked(f, x, h, |_| true)
}

/// Like [`gradient_check`], but only coordinates with `include(i)` are probed.
pub fn gradient_check_masked<F, M>(f: F, x: &Tensor, h: f64, include: M) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
    M: Fn(usize) -> bool,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config(format!("finite-difference step must be positive, got {h}")));
    }
    let (f0, analytic) = f(x)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite {
            index: 0,
            context: "objective at the base point".into(),
        });
    }
    analytic.expect_shape("gradient_check", x.shape())?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        coords_checked: 0,
    };
    let mut probe = x.clone();
    for i in 0..x.len() {
        if !include(i) {
            continue;
        }
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let (fp, _) = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let (fm, _) = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                context: "objective at finite-difference probe".into(),
            });
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = relative_error(analytic.data()[i], numeric);
        report.coords_checked += 1;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Operations covered by [`run_suite`].
pub const SUITE_OPS: [&str; 8] = [
    "conv2d",
    "dense",
    "relu",
    "max_pool2",
    "batch_norm2d",
    "dropout",
    "softmax_cross_entropy",
    "dfreg",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_error: f64,
}

impl SuiteResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub seed: u64,
    pub cases: usize,
    pub h: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 100,
            h: 1e-5,
        }
    }
}

/// `Σ proj ⊙ y`; its gradient with respect to `y` is `proj`.
fn project(y: &Tensor, proj: &Tensor) -> Result<f64> {
    y.dot(proj)
}

fn merge(results: &mut f64, r: GradCheckReport) {
    *results = results.max(r.max_rel_error);
}

fn case_conv2d(rng: &mut Rng, h: f64) -> Result<f64> {
    let stride = 1 + rng.below(2);
    let pad = rng.below(2);
    let (n, cin, cout, k) = (1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(3), 2 + rng.below(2));
    // pick a spatial size compatible with the stride
    let mut hw = 4 + rng.below(3);
    while !(hw + 2 * pad - k).is_multiple_of(stride) {
        hw += 1;
    }
    let x = Tensor::uniform(&[n, cin, hw, hw], -1.0, 1.0, rng);
    let kern = Tensor::uniform(&[cout, cin, k, k], -1.0, 1.0, rng);
    let bias = Tensor::uniform(&[cout], -1.0, 1.0, rng);
    let y = nn::conv2d(&x, &kern, &bias, pad, stride)?;
    let proj = Tensor::uniform(y.shape(), -1.0, 1.0, rng);

    let mut worst = 0.0;
    let r = gradient_check(
        |xi| {
            let y = nn::conv2d(xi, &kern, &bias, pad, stride)?;
            let g = nn::conv2d_backward(xi, &kern, &proj, pad, stride)?;
            Ok((project(&y, &proj)?, g.input))
        },
        &x,
        h,
    )?;
    merge(&mut worst, r);
    let r = gradient_check(
        |ki| {
            let y = nn::conv2d(&x, ki, &bias, pad, stride)?;
            let g = nn::conv2d_backward(&x, ki, &proj, pad, stride)?;
            Ok((project(&y, &proj)?, g.kernel))
        },
        &kern,
        h,
    )?;
    merge(&mut worst, r);
    let r = gradient_check(
        |bi| {
            let y = nn::conv2d(&x, &kern, bi, pad, stride)?;
            let g = nn::conv2d_backward(&x, &kern, &proj, pad, stride)?;
            Ok((project(&y, &proj)?, g.bias))
        },
        &bias,
        h,
    )?;
    merge(&mut worst, r);
    Ok(worst)
}

fn case_dense(rng: &mut Rng, h: f64) -> Result<f64> {
    let (n, f, o) = (1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(4));
    let x = Tensor::uniform(&[n, f], -1.0, 1.0, rng);
    let w = Tensor::uniform(&[o, f], -1.0, 1.0, rng);
    let b = Tensor::uniform(&[o], -1.0, 1.0, rng);
    let proj = Tensor::uniform(&[n, o], -1.0, 1.0, rng);
    let mut worst = 0.0;
    let r = gradient_check(
        |xi| Ok((project(&nn::dense(xi, &w, &b)?, &proj)?, nn::dense_backward(xi, &w, &proj)?.input)),
        &x,
        h,
    )?;
    merge(&mut worst, r);
    let r = gradient_check(
        |wi| Ok((project(&nn::dense(&x, wi, &b)?, &proj)?, nn::dense_backward(&x, wi, &proj)?.weight)),
        &w,
        h,
    )?;
    merge(&mut worst, r);
    let r = gradient_check(
        |bi| Ok((project(&nn::dense(&x, &w, bi)?, &proj)?, nn::dense_backward(&x, &w, &proj)?.bias)),
        &b,
        h,
    )?;
    merge(&mut worst, r);
    Ok(worst)
}

fn case_relu(rng: &mut Rng, h: f64) -> Result<f64> {
    let n = 2 + rng.below(30);
    let data = (0..n)
        .map(|_| loop {
            let v = rng.uniform_range(-1.0, 1.0);
            if v.abs() > 1e-3 {
                break v;
            }
        })
        .collect();
    let x = Tensor::from_vec(data);
    let proj = Tensor::uniform(&[n], -1.0, 1.0, rng);
    let r = gradient_check(
        |xi| Ok((project(&nn::relu(xi), &proj)?, nn::relu_backward(xi, &proj)?)),
        &x,
        h,
    )?;
    Ok(r.max_rel_error)
}

fn case_max_pool2(rng: &mut Rng, h: f64) -> Result<f64> {
    let (n, c, hh, ww) = (1 + rng.below(2), 1 + rng.below(3), 2 * (1 + rng.below(3)), 2 * (1 + rng.below(3)));
    let numel = n * c * hh * ww;
    // Distinct values on a grid much coarser than h, so no window has a near tie.
    let mut order: Vec<usize> = (0..numel).collect();
    rng.shuffle(&mut order);
    let spacing = 2.0 / numel as f64;
    let data = order
        .iter()
        .map(|&k| -1.0 + spacing * (k as f64 + 0.25 + 0.5 * rng.uniform()))
        .collect();
    let x = Tensor::new(vec![n, c, hh, ww], data)?;
    let (y, _) = nn::max_pool2(&x)?;
    let proj = Tensor::uniform(y.shape(), -1.0, 1.0, rng);
    let r = gradient_check(
        |xi| {
            let (y, arg) = nn::max_pool2(xi)?;
            Ok((project(&y, &proj)?, nn::max_pool2_backward(xi.shape(), &arg, &proj)?))
        },
        &x,
        h,
    )?;
    Ok(r.max_rel_error)
}

fn case_batch_norm(rng: &mut Rng, h: f64) -> Result<f64> {
    let (n, c, hw) = (2 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3));
    let mode = if rng.below(4) == 0 { Mode::Eval } else { Mode::Train };
    let x = Tensor::uniform(&[n, c, hw, hw], -1.0, 1.0, rng);
    let gamma = Tensor::uniform(&[c], 0.5, 1.5, rng);
    let beta = Tensor::uniform(&[c], -0.5, 0.5, rng);
    let stats = RunningStats {
        mean: (0..c).map(|_| rng.uniform_range(-0.2, 0.2)).collect(),
        var: (0..c).map(|_| rng.uniform_range(0.5, 1.5)).collect(),
    };
    let proj = Tensor::uniform(x.shape(), -1.0, 1.0, rng);
    let eps = 1e-5;
    let fwd = |xi: &Tensor, g: &Tensor, b: &Tensor| {
        let mut s = stats.clone();
        nn::batch_norm2d(xi, g, b, &mut s, mode, eps, 0.1)
    };
    let mut worst = 0.0;
    let r = gradient_check(
        |xi| {
            let (y, cache) = fwd(xi, &gamma, &beta)?;
            Ok((project(&y, &proj)?, nn::batch_norm2d_backward(&cache, &gamma, &proj)?.input))
        },
        &x,
        h,
    )?;
    merge(&mut worst, r);
    let r = gradient_check(
        |gi| {
            let (y, cache) = fwd(&x, gi, &beta)?;
            Ok((project(&y, &proj)?, nn::batch_norm2d_backward(&cache, gi, &proj)?.gamma))
        },
        &gamma,
        h,
    )?;
    merge(&mut worst, r);
    let r = gradient_check(
        |bi| {
            let (y, cache) = fwd(&x, &gamma, bi)?;
            Ok((project(&y, &proj)?, nn::batch_norm2d_backward(&cache, &gamma, &proj)?.beta))
        },
        &beta,
        h,
    )?;
    merge(&mut worst, r);
    Ok(worst)
}

fn case_dropout(rng: &mut Rng, h: f64) -> Result<f64> {
    let n = 2 + rng.below(30);
    let p = rng.uniform_range(0.0, 0.9);
    let seed = rng.next_u64();
    let x = Tensor::uniform(&[n], -1.0, 1.0, rng);
    let proj = Tensor::uniform(&[n], -1.0, 1.0, rng);
    let r = gradient_check(
        |xi| {
            // Same mask at every probe: the mask is a function of the rng state only.
            let (y, mask) = nn::dropout(xi, p, Mode::Train, &mut Rng::new(seed))?;
            Ok((project(&y, &proj)?, nn::dropout_backward(&proj, mask.as_deref())))
        },
        &x,
        h,
    )?;
    Ok(r.max_rel_error)
}

fn case_softmax(rng: &mut Rng, h: f64) -> Result<f64> {
    let (n, k) = (1 + rng.below(5), 2 + rng.below(9));
    let z = Tensor::uniform(&[n, k], -3.0, 3.0, rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
    let smoothing = if rng.below(2) == 0 { 0.1 } else { rng.uniform_range(0.0, 0.5) };
    let r = gradient_check(|zi| nn::softmax_cross_entropy(zi, &labels, smoothing), &z, h)?;
    Ok(r.max_rel_error)
}

/// Random weights kept at least `margin` away from every soft-binning
/// breakpoint (bin centers) of `cfg`.
pub fn weights_away_from_breakpoints(n: usize, cfg: &EnergyConfig, margin: f64, spread: f64, rng: &mut Rng) -> Vec<f64> {
    let width = cfg.bin_width();
    (0..n)
        .map(|_| loop {
            let w = rng.uniform_range(-spread, spread);
            let t = (w - cfg.range_lo) / width - 0.5;
            let dist = (t - t.round()).abs() * width;
            if dist >= margin {
                break w;
            }
        })
        .collect()
}

fn case_dfreg(rng: &mut Rng, h: f64) -> Result<f64> {
    let cfg = EnergyConfig {
        alpha: 10f64.powf(rng.uniform_range(-4.0, -2.0)),
        lambda: if rng.below(3) == 0 { rng.uniform_range(0.0, 1e-3) } else { 0.0 },
        kinetic_coeff: if rng.below(3) == 0 { rng.uniform_range(0.0, 1e-3) } else { 0.0 },
        num_bins: [8, 16, 32, 80][rng.below(4)],
        binning: Binning::SoftTriangular,
        ..EnergyConfig::default()
    };
    let n = 16 + rng.below(113);
    let w = Tensor::from_vec(weights_away_from_breakpoints(n, &cfg, 1e-3, 1.1, rng));
    let r = gradient_check(
        |wi| {
            let (e, g) = density::dfreg_loss(wi.data(), &cfg)?;
            Ok((e.total(), Tensor::from_vec(g)))
        },
        &w,
        h,
    )?;
    Ok(r.max_rel_error)
}

/// Runs `cases` randomized checks for `op`.
pub fn run_op(op: &str, cfg: &SuiteConfig) -> Result<SuiteResult> {
    let case: fn(&mut Rng, f64) -> Result<f64> = match op {
        "conv2d" => case_conv2d,
        "dense" => case_dense,
        "relu" => case_relu,
        "max_pool2" => case_max_pool2,
        "batch_norm2d" => case_batch_norm,
        "dropout" => case_dropout,
        "softmax_cross_entropy" => case_softmax,
        "dfreg" => case_dfreg,
        other => return Err(Error::config(format!("unknown gradcheck op {other}"))),
    };
    let name = SUITE_OPS.iter().copied().find(|o| *o == op).unwrap_or("unknown");
    let mut rng = Rng::named(cfg.seed, op);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.cases {
        worst = worst.max(case(&mut rng, cfg.h)?);
    }
    Ok(SuiteResult {
        op: name,
        cases: cfg.cases,
        max_rel_error: worst,
    })
}

pub fn run_suite(ops: &[&str], cfg: &SuiteConfig) -> Result<Vec<SuiteResult>> {
    ops.iter().map(|op| run_op(op, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::uniform(&[20], -1.0, 1.0, &mut Rng::new(1));
        let r = gradient_check(|x| Ok((x.sum_sq(), x.map(|v| 2.0 * v))), &x, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
        assert_eq!(r.coords_checked, 20);
    }

    #[test]
    fn constant_function() {
        let x = Tensor::uniform(&[5], -1.0, 1.0, &mut Rng::new(1));
        let r = gradient_check(|x| Ok((3.0, Tensor::zeros(x.shape()))), &x, 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = Tensor::from_vec(vec![0.5, -0.3]);
        let r = gradient_check(|x| Ok((x.sum_sq(), x.clone())), &x, 1e-5).unwrap();
        assert!(r.max_rel_error > 0.4);
    }

    #[test]
    fn non_finite_probe_names_coordinate() {
        let x = Tensor::from_vec(vec![1.0, 0.0]);
        let err = gradient_check(
            |x| {
                let v = if x.data()[1] > 0.0 { f64::NAN } else { x.sum() };
                Ok((v, Tensor::ones(&[2])))
            },
            &x,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }), "{err:?}");
    }

    #[test]
    fn rejects_bad_step() {
        let x = Tensor::from_vec(vec![1.0]);
        assert!(gradient_check(|x| Ok((x.sum(), Tensor::ones(&[1]))), &x, 0.0).is_err());
    }

    #[test]
    fn dfreg_64_weights() {
        let cfg = EnergyConfig {
            alpha: 1e-3,
            num_bins: 16,
            ..EnergyConfig::default()
        };
        let mut rng = Rng::new(64);
        let w = Tensor::from_vec(weights_away_from_breakpoints(64, &cfg, 1e-3, 1.0, &mut rng));
        let r = gradient_check(
            |wi| {
                let (e, g) = density::dfreg_loss(wi.data(), &cfg)?;
                Ok((e.total(), Tensor::from_vec(g)))
            },
            &w,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{}", r.max_rel_error);
    }

    #[test]
    fn suite_small_run() {
        let cfg = SuiteConfig { cases: 5, ..SuiteConfig::default() };
        for r in run_suite(&SUITE_OPS, &cfg).unwrap() {
            assert!(r.passed(1e-4), "{} {}", r.op, r.max_rel_error);
        }
    }
}
