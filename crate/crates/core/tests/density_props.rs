//! Laws of the weight density, its penalty and entropy.

use dfreg_core::density::{
    dfreg_loss, estimate_density, interaction_energy, kinetic_energy, shannon_entropy, Binning, EnergyConfig,
    WeightDensity,
};
use dfreg_core::gradcheck::{relative_error, weights_away_from_breakpoints};
use dfreg_core::Rng;
use proptest::prelude::*;

fn cfg(bins: usize, binning: Binning) -> EnergyConfig {
    EnergyConfig {
        num_bins: bins,
        binning,
        ..EnergyConfig::default()
    }
}

fn binning() -> impl Strategy<Value = Binning> {
    prop_oneof![Just(Binning::Hard), Just(Binning::SoftTriangular)]
}

#[test]
fn uniform_anchors() {
    let d = WeightDensity::from_rho(vec![1.0 / 16.0; 16], -1.0, 1.0).unwrap();
    assert!((interaction_energy(&d) - 0.0625).abs() <= 1e-12);
    let d = WeightDensity::from_rho(vec![1.0 / 80.0; 80], -1.0, 1.0).unwrap();
    assert!((shannon_entropy(&d) - 80f64.ln()).abs() <= 1e-9);
    let d = WeightDensity::from_rho(vec![0.5, 0.5], -1.0, 1.0).unwrap();
    assert!((shannon_entropy(&d) - 2f64.ln()).abs() <= 1e-15);
}

#[test]
fn one_bin_per_weight_gives_uniform_density() {
    for binning in [Binning::Hard, Binning::SoftTriangular] {
        let c = cfg(16, binning);
        let w: Vec<f64> = (0..16).map(|i| c.bin_center(i)).collect();
        let d = estimate_density(&w, &c).unwrap();
        assert_eq!(interaction_energy(&d), 0.0625);
        assert_eq!(kinetic_energy(&d), 0.0);
    }
}

#[test]
fn one_hot_penalty() {
    let c = EnergyConfig {
        alpha: 1e-3,
        ..cfg(80, Binning::SoftTriangular)
    };
    let w = vec![c.bin_center(17); 50];
    let (e, _) = dfreg_loss(&w, &c).unwrap();
    assert_eq!(e.interaction, 1.0);
    assert_eq!(e.dfreg_loss, 1e-3);
    let d = estimate_density(&w, &c).unwrap();
    assert_eq!(shannon_entropy(&d), 0.0);
}

#[test]
fn penalty_gradient_finite_differences() {
    let mut rng = Rng::new(2024);
    for _ in 0..100 {
        let c = EnergyConfig {
            alpha: 1e-3,
            ..cfg(16, Binning::SoftTriangular)
        };
        let w = weights_away_from_breakpoints(64, &c, 1e-3, 1.0, &mut rng);
        let (_, g) = dfreg_loss(&w, &c).unwrap();
        let h = 1e-5;
        for i in 0..w.len() {
            let mut p = w.clone();
            p[i] += h;
            let mut m = w.clone();
            m[i] -= h;
            let fd = (dfreg_loss(&p, &c).unwrap().0.total() - dfreg_loss(&m, &c).unwrap().0.total()) / (2.0 * h);
            assert!(relative_error(g[i], fd) < 1e-4, "weight {i}: {} vs {fd}", g[i]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn normalization_and_bounds(
        w in prop::collection::vec(-1.5f64..1.5, 1..300),
        bins in 2usize..120,
        mode in binning(),
    ) {
        let d = estimate_density(&w, &cfg(bins, mode)).unwrap();
        let total: f64 = d.rho.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        let s = interaction_energy(&d);
        prop_assert!(s >= 1.0 / bins as f64 - 1e-12 && s <= 1.0 + 1e-12);
        let h = shannon_entropy(&d);
        prop_assert!(h >= 0.0 && h <= (bins as f64).ln() + 1e-12);
        prop_assert!(d.rho.iter().all(|&r| r >= 0.0));
        prop_assert_eq!(d.total_weights, w.len());
    }

    #[test]
    fn centers_agree_bitwise(idx in prop::collection::vec(0usize..1000, 1..200), bins in 2usize..100) {
        let hard = cfg(bins, Binning::Hard);
        let w: Vec<f64> = idx.iter().map(|i| hard.bin_center(i % bins)).collect();
        let a = estimate_density(&w, &hard).unwrap();
        let b = estimate_density(&w, &cfg(bins, Binning::SoftTriangular)).unwrap();
        prop_assert_eq!(
            a.rho.iter().map(|r| r.to_bits()).collect::<Vec<_>>(),
            b.rho.iter().map(|r| r.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn permutation_invariance(w in prop::collection::vec(-1.2f64..1.2, 2..200), seed in 0u64..1000, mode in binning()) {
        let c = EnergyConfig { alpha: 1e-3, kinetic_coeff: 0.1, ..cfg(40, mode) };
        let mut p = w.clone();
        Rng::new(seed).shuffle(&mut p);
        let a = estimate_density(&w, &c).unwrap();
        let b = estimate_density(&p, &c).unwrap();
        for (x, y) in a.rho.iter().zip(&b.rho) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        if mode == Binning::Hard {
            prop_assert_eq!(&a, &b);
        }
        prop_assert!((shannon_entropy(&a) - shannon_entropy(&b)).abs() <= 1e-12);
        prop_assert!((interaction_energy(&a) - interaction_energy(&b)).abs() <= 1e-12);
        prop_assert!((kinetic_energy(&a) - kinetic_energy(&b)).abs() <= 1e-9);
    }

    /// Dyadic weights and shifts keep `w - lo` exact, so hard binning is
    /// bitwise translation covariant.
    #[test]
    fn translation_covariance(k in prop::collection::vec(-4096i64..4096, 1..200), shift in -64i64..64, bins in 2usize..100) {
        let w: Vec<f64> = k.iter().map(|&v| v as f64 / 4096.0).collect();
        let delta = shift as f64 / 16.0;
        let c = cfg(bins, Binning::Hard);
        let moved_cfg = EnergyConfig { range_lo: c.range_lo + delta, range_hi: c.range_hi + delta, ..c };
        let moved: Vec<f64> = w.iter().map(|v| v + delta).collect();
        let a = estimate_density(&w, &c).unwrap();
        let b = estimate_density(&moved, &moved_cfg).unwrap();
        prop_assert_eq!(a.counts, b.counts);
        prop_assert_eq!(
            a.rho.iter().map(|r| r.to_bits()).collect::<Vec<_>>(),
            b.rho.iter().map(|r| r.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn zero_coefficients_give_zero_loss(w in prop::collection::vec(-1.0f64..1.0, 1..100)) {
        let (e, g) = dfreg_loss(&w, &cfg(80, Binning::SoftTriangular)).unwrap();
        prop_assert_eq!(e.total(), 0.0);
        prop_assert!(g.iter().all(|&v| v == 0.0));
    }

    /// One plain gradient step of size 1e-2 on the penalty never raises `Σ ρᵢ²`.
    #[test]
    fn single_step_descent(seed in 0u64..10_000) {
        let mut rng = Rng::new(seed);
        let c = EnergyConfig { alpha: 1.0, ..cfg(80, Binning::SoftTriangular) };
        let n = 50 + rng.below(500);
        let w: Vec<f64> = (0..n).map(|_| 0.3 * rng.normal()).collect();
        let (before, g) = dfreg_loss(&w, &c).unwrap();
        let stepped: Vec<f64> = w.iter().zip(&g).map(|(x, d)| x - 1e-2 * d).collect();
        let (after, _) = dfreg_loss(&stepped, &c).unwrap();
        prop_assert!(after.interaction <= before.interaction);
    }
}
