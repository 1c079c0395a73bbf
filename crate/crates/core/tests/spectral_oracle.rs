//! Spectra against frozen 40-digit direct-sum DFT values.

use dfreg_core::spectral::{average_channel_spectrum, dft2_magnitude, low_frequency_ratio, FilterSpectrum};
use dfreg_core::{Rng, Tensor};
use proptest::prelude::*;
use serde_json::Value;

fn oracle() -> Value {
    serde_json::from_str(include_str!("fixtures/dft_oracle.json")).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn random_kernels_match_oracle() {
    let o = oracle();
    let kernels = o["kernels"].as_array().unwrap();
    assert_eq!(kernels.len(), 200);
    for k in kernels {
        let rows = k["rows"].as_u64().unwrap() as usize;
        let cols = k["cols"].as_u64().unwrap() as usize;
        let got = dft2_magnitude(&floats(&k["values"]), rows, cols).unwrap();
        for (g, e) in got.iter().zip(floats(&k["magnitude"])) {
            assert!((g - e).abs() <= 1e-9, "{rows}x{cols}: {g} vs {e}");
        }
    }
}

#[test]
fn parseval_against_oracle_energy() {
    let o = oracle();
    for k in o["kernels"].as_array().unwrap() {
        let rows = k["rows"].as_u64().unwrap() as usize;
        let cols = k["cols"].as_u64().unwrap() as usize;
        let values = floats(&k["values"]);
        let spatial: f64 = values.iter().map(|v| v * v).sum::<f64>() * (rows * cols) as f64;
        let freq: f64 = dft2_magnitude(&values, rows, cols).unwrap().iter().map(|m| m * m).sum();
        let expected = k["energy"].as_f64().unwrap();
        assert!((freq - expected).abs() <= 1e-9 * expected);
        assert!((spatial - expected).abs() <= 1e-9 * expected);
    }
}

#[test]
fn channel_average_matches_oracle() {
    let o = oracle();
    let a = &o["average"];
    let t = Tensor::new(vec![8, 3, 3, 3], floats(&a["values"])).unwrap();
    let s = average_channel_spectrum("conv", &t).unwrap();
    for (g, e) in s.grid.iter().zip(floats(&a["centered_mean"])) {
        assert!((g - e).abs() <= 1e-9);
    }
    assert!((s.dc_fraction - a["dc_fraction"].as_f64().unwrap()).abs() <= 1e-12);
    assert!((low_frequency_ratio(&s, 1.0) - a["low_frequency_ratio_r1"].as_f64().unwrap()).abs() <= 1e-12);
}

/// Cell-by-cell enumeration in row-major order.
fn brute_force_ratio(s: &FilterSpectrum, radius: f64) -> f64 {
    let (cr, cc) = (s.rows / 2, s.cols / 2);
    let mut total = 0.0;
    let mut within = 0.0;
    for r in 0..s.rows {
        for c in 0..s.cols {
            let e = s.at(r, c) * s.at(r, c);
            total += e;
            let (dr, dc) = (r as f64 - cr as f64, c as f64 - cc as f64);
            if dr * dr + dc * dc <= radius * radius {
                within += e;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        within / total
    }
}

#[test]
fn ratio_equals_enumeration_exactly() {
    let mut rng = Rng::new(31);
    for _ in 0..200 {
        let kh = 1 + rng.below(7);
        let kw = 1 + rng.below(7);
        let t = Tensor::uniform(&[1 + rng.below(4), 1 + rng.below(3), kh, kw], -1.0, 1.0, &mut rng);
        let s = average_channel_spectrum("conv", &t).unwrap();
        for radius in [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 10.0] {
            assert_eq!(low_frequency_ratio(&s, radius), brute_force_ratio(&s, radius));
        }
    }
}

#[test]
fn zero_kernel_spectrum() {
    let s = average_channel_spectrum("conv", &Tensor::zeros(&[2, 2, 3, 3])).unwrap();
    assert_eq!(s.dc_fraction, 0.0);
    assert_eq!(low_frequency_ratio(&s, 1.0), 0.0);
}

proptest! {
    #[test]
    fn parseval(values in prop::collection::vec(-2.0f64..2.0, 1..50), cols in 1usize..8) {
        let rows = values.len().div_ceil(cols);
        let mut k = values.clone();
        k.resize(rows * cols, 0.0);
        let spatial: f64 = k.iter().map(|v| v * v).sum::<f64>() * (rows * cols) as f64;
        let freq: f64 = dft2_magnitude(&k, rows, cols).unwrap().iter().map(|m| m * m).sum();
        prop_assert!((spatial - freq).abs() <= 1e-9 * spatial.max(1e-300));
    }

    #[test]
    fn sign_invariance(values in prop::collection::vec(-2.0f64..2.0, 9)) {
        let neg: Vec<f64> = values.iter().map(|v| -v).collect();
        let a = dft2_magnitude(&values, 3, 3).unwrap();
        let b = dft2_magnitude(&neg, 3, 3).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn ratio_monotone_and_bounded(seed in 0u64..1000) {
        let t = Tensor::uniform(&[3, 2, 5, 5], -1.0, 1.0, &mut Rng::new(seed));
        let s = average_channel_spectrum("conv", &t).unwrap();
        let mut prev = 0.0;
        for i in 0..40 {
            let r = low_frequency_ratio(&s, i as f64 * 0.1);
            prop_assert!(r >= prev && (0.0..=1.0).contains(&r));
            prev = r;
        }
        prop_assert_eq!(low_frequency_ratio(&s, 32f64.sqrt()), 1.0);
        prop_assert!(s.grid.iter().all(|&m| m >= 0.0));
    }
}
