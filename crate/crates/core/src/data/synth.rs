use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{Dataset, Split};

/// Class-conditional images: each class is a bright Gaussian blob at its own
/// position on a ring plus a class-specific stripe pattern, with a little
/// pixel noise and positional jitter. Deterministic in `seed`.
pub fn synth_dataset(seed: u64, n: usize, k: usize, size: usize, split: Split) -> Dataset {
    assert!(k >= 2, "synth_dataset needs at least two classes");
    let stream = match split {
        Split::Train => "synth-train",
        Split::Test => "synth-test",
    };
    let mut rng = Rng::named(seed, stream);
    let plane = size * size;
    let mut data = Vec::with_capacity(n * plane);
    let mut labels = Vec::with_capacity(n);
    let mid = (size as f64 - 1.0) / 2.0;
    let ring = 0.28 * size as f64;
    let sigma = (size as f64 / 7.0).max(0.75);
    for _ in 0..n {
        let c = rng.below(k);
        let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
        let cy = mid + ring * angle.sin() + rng.uniform_range(-0.75, 0.75);
        let cx = mid + ring * angle.cos() + rng.uniform_range(-0.75, 0.75);
        let period = 2.0 + (c % 3) as f64;
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let blob = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
                let stripe = if c.is_multiple_of(2) {
                    0.15 * (1.0 + (2.0 * std::f64::consts::PI * y as f64 / period).cos())
                } else {
                    0.15 * (1.0 + (2.0 * std::f64::consts::PI * x as f64 / period).cos())
                };
                let v = 0.8 * blob + stripe + 0.05 * rng.normal();
                data.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(c);
    }
    Dataset {
        images: Tensor::new(vec![n, 1, size, size], data).expect("shape matches by construction"),
        labels,
        num_classes: k,
        split,
    }
}
