//! Empirical weight density and the energy terms built on it.
//!
//! A weight population is binned over `[range_lo, range_hi]` into `B` equal
//! bins. Hard binning counts each weight once in the bin containing it; soft
//! (triangular) binning splits each weight linearly between the two bins whose
//! centers bracket it, which makes every `ρᵢ` piecewise linear in the weights
//! and gives the penalty a usable gradient.
//!
//! Energies on the normalized density `ρ`:
//!
//! * interaction `Σ ρᵢ²`, minimal for a uniform density and maximal for a
//!   one-hot one;
//! * kinetic `Σ (ρᵢ₊₁ − ρᵢ)² / Δw`, a discrete `∫ (ρ')² dw`;
//! * the penalty `α·interaction + κ·kinetic`, with an optional `λ·Σ w²` on the side.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    Hard,
    SoftTriangular,
}

impl Binning {
    pub fn as_str(self) -> &'static str {
        match self {
            Binning::Hard => "hard",
            Binning::SoftTriangular => "soft_triangular",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hard" => Some(Binning::Hard),
            "soft" | "soft_triangular" => Some(Binning::SoftTriangular),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfRange {
    #[default]
    ClampToEdgeBins,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub kinetic_coeff: f64,
    pub num_bins: usize,
    pub range_lo: f64,
    pub range_hi: f64,
    pub binning: Binning,
    pub out_of_range: OutOfRange,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            lambda: 0.0,
            kinetic_coeff: 0.0,
            num_bins: 80,
            range_lo: -1.0,
            range_hi: 1.0,
            binning: Binning::SoftTriangular,
            out_of_range: OutOfRange::ClampToEdgeBins,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bins < 2 {
            return Err(Error::config(format!("num_bins must be >= 2, got {}", self.num_bins)));
        }
        if !(self.range_lo.is_finite() && self.range_hi.is_finite() && self.range_lo < self.range_hi) {
            return Err(Error::config(format!(
                "density range must satisfy range_lo < range_hi, got [{}, {}]",
                self.range_lo, self.range_hi
            )));
        }
        for (name, v) in [("alpha", self.alpha), ("lambda", self.lambda), ("kinetic_coeff", self.kinetic_coeff)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.range_hi - self.range_lo) / self.num_bins as f64
    }

    /// Center of bin `i`. Weights placed exactly here land wholly in bin `i`
    /// under both binning modes.
    pub fn bin_center(&self, i: usize) -> f64 {
        self.range_lo + (i as f64 + 0.5) * self.bin_width()
    }

    pub fn with_binning(mut self, binning: Binning) -> Self {
        self.binning = binning;
        self
    }
}

/// Normalized histogram of a weight population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDensity {
    pub edges: Vec<f64>,
    pub counts: Vec<f64>,
    pub rho: Vec<f64>,
    pub total_weights: usize,
    pub bin_width: f64,
    pub binning: Binning,
}

impl WeightDensity {
    pub fn num_bins(&self) -> usize {
        self.rho.len()
    }

    /// Builds a density directly from normalized bin masses (mainly for tests
    /// and analytic anchors). `rho` must be non-negative and sum to one.
    pub fn from_rho(rho: Vec<f64>, range_lo: f64, range_hi: f64) -> Result<Self> {
        let b = rho.len();
        if b < 2 {
            return Err(Error::config("a density needs at least 2 bins"));
        }
        if rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::config("density masses must be finite and non-negative"));
        }
        let total: f64 = rho.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("density masses sum to {total}, expected 1")));
        }
        let width = (range_hi - range_lo) / b as f64;
        Ok(Self {
            edges: edges(range_lo, range_hi, b),
            counts: rho.clone(),
            rho,
            total_weights: 1,
            bin_width: width,
            binning: Binning::Hard,
        })
    }

    /// CSV with a `#` header line followed by `bin_lo,bin_hi,count,rho` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# bins={} range_lo={} range_hi={} mode={} total_weights={}",
            self.num_bins(),
            self.edges[0],
            self.edges[self.num_bins()],
            self.binning.as_str(),
            self.total_weights
        );
        out.push_str("bin_lo,bin_hi,count,rho\n");
        for i in 0..self.num_bins() {
            let _ = writeln!(out, "{},{},{},{}", self.edges[i], self.edges[i + 1], self.counts[i], self.rho[i]);
        }
        out
    }
}

fn edges(lo: f64, hi: f64, b: usize) -> Vec<f64> {
    let width = (hi - lo) / b as f64;
    let mut e: Vec<f64> = (0..=b).map(|i| lo + i as f64 * width).collect();
    e[b] = hi;
    e
}

/// Where one weight's unit mass goes.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Assignment {
    /// Lower bin receiving `1 - frac`.
    bin: usize,
    /// Share given to `bin + 1`; zero for hard binning and for clamped weights.
    frac: f64,
    /// Whether the weight sits on a sloped part of the soft kernel (so that
    /// moving it shifts mass from `bin` to `bin + 1`).
    sloped: bool,
}

fn assign_hard(w: f64, cfg: &EnergyConfig) -> Assignment {
    let b = cfg.num_bins;
    let width = cfg.bin_width();
    let x = w - cfg.range_lo;
    let bin = if w >= cfg.range_hi {
        b - 1
    } else if x <= 0.0 {
        0
    } else {
        let mut k = ((x / width).floor() as usize).min(b - 1);
        while k > 0 && x < k as f64 * width {
            k -= 1;
        }
        while k + 1 < b && x >= (k + 1) as f64 * width {
            k += 1;
        }
        k
    };
    Assignment { bin, frac: 0.0, sloped: false }
}

fn assign_soft(w: f64, cfg: &EnergyConfig) -> Assignment {
    let b = cfg.num_bins;
    let width = cfg.bin_width();
    let clamped = |bin| Assignment { bin, frac: 0.0, sloped: false };
    if w < cfg.bin_center(0) {
        return clamped(0);
    }
    if w >= cfg.bin_center(b - 1) {
        return clamped(b - 1);
    }
    let t = (w - cfg.range_lo) / width - 0.5;
    let mut k = (t.floor().max(0.0) as usize).min(b - 2);
    while k > 0 && w < cfg.bin_center(k) {
        k -= 1;
    }
    while k + 2 < b && w >= cfg.bin_center(k + 1) {
        k += 1;
    }
    let frac = ((w - cfg.bin_center(k)) / width).clamp(0.0, 1.0);
    Assignment { bin: k, frac, sloped: true }
}

fn assign(w: f64, cfg: &EnergyConfig) -> Assignment {
    match cfg.binning {
        Binning::Hard => assign_hard(w, cfg),
        Binning::SoftTriangular => assign_soft(w, cfg),
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::config("cannot estimate a density from zero weights"));
    }
    if let Some(index) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::NonFinite {
            index,
            context: format!("weight value {}", weights[index]),
        });
    }
    Ok(())
}

/// Bins `weights` according to `config` (range, bin count and binning mode).
/// Weights outside the range are clamped into the edge bins.
pub fn estimate_density(weights: &[f64], config: &EnergyConfig) -> Result<WeightDensity> {
    config.validate()?;
    check_weights(weights)?;
    let b = config.num_bins;
    let mut counts = vec![0.0; b];
    for &w in weights {
        let a = assign(w, config);
        if a.frac == 0.0 {
            counts[a.bin] += 1.0;
        } else {
            counts[a.bin] += 1.0 - a.frac;
            counts[a.bin + 1] += a.frac;
        }
    }
    let n = weights.len() as f64;
    let rho = counts.iter().map(|c| c / n).collect();
    Ok(WeightDensity {
        edges: edges(config.range_lo, config.range_hi, b),
        counts,
        rho,
        total_weights: weights.len(),
        bin_width: config.bin_width(),
        binning: config.binning,
    })
}

/// `Σ ρᵢ²`, in `[1/B, 1]`.
pub fn interaction_energy(density: &WeightDensity) -> f64 {
    density.rho.iter().map(|r| r * r).sum()
}

/// `Σ (ρᵢ₊₁ − ρᵢ)² / Δw`; zero iff the density is flat.
pub fn kinetic_energy(density: &WeightDensity) -> f64 {
    density.rho.windows(2).map(|p| (p[1] - p[0]) * (p[1] - p[0])).sum::<f64>() / density.bin_width
}

/// Natural-log Shannon entropy `−Σ ρᵢ ln ρᵢ` with `0 ln 0 = 0`.
pub fn shannon_entropy(density: &WeightDensity) -> f64 {
    let h: f64 = density.rho.iter().filter(|&&r| r > 0.0).map(|&r| -r * r.ln()).sum();
    h.max(0.0)
}

/// Evaluated energy terms for one weight population.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub interaction: f64,
    pub kinetic: f64,
    /// `alpha * interaction + kinetic_coeff * kinetic`.
    pub dfreg_loss: f64,
    /// `lambda * Σ w²`.
    pub l2: f64,
}

impl EnergyBreakdown {
    /// Everything this module contributes to the training objective.
    pub fn total(&self) -> f64 {
        self.dfreg_loss + self.l2
    }
}

fn breakdown(density: &WeightDensity, weights: &[f64], config: &EnergyConfig) -> EnergyBreakdown {
    let interaction = interaction_energy(density);
    let kinetic = kinetic_energy(density);
    let l2 = if config.lambda > 0.0 {
        config.lambda * weights.iter().map(|w| w * w).sum::<f64>()
    } else {
        0.0
    };
    EnergyBreakdown {
        interaction,
        kinetic,
        dfreg_loss: config.alpha * interaction + config.kinetic_coeff * kinetic,
        l2,
    }
}

/// Energy terms without a gradient; valid under either binning mode.
pub fn dfreg_energy(weights: &[f64], config: &EnergyConfig) -> Result<(EnergyBreakdown, WeightDensity)> {
    let density = estimate_density(weights, config)?;
    Ok((breakdown(&density, weights, config), density))
}

/// Penalty value and its exact gradient with respect to each weight.
///
/// Requires soft binning; under hard binning the density is piecewise
/// constant in the weights and this returns [`Error::HardBinningGradient`].
/// On a bin center the right-hand derivative is used.
pub fn dfreg_loss(weights: &[f64], config: &EnergyConfig) -> Result<(EnergyBreakdown, Vec<f64>)> {
    if config.binning == Binning::Hard {
        return Err(Error::HardBinningGradient);
    }
    let density = estimate_density(weights, config)?;
    let energy = breakdown(&density, weights, config);

    let rho = &density.rho;
    let b = rho.len();
    let dw = density.bin_width;
    // dL/dρᵢ
    let mut dl_drho: Vec<f64> = rho.iter().map(|r| 2.0 * config.alpha * r).collect();
    if config.kinetic_coeff > 0.0 {
        let c = 2.0 * config.kinetic_coeff / dw;
        for i in 0..b - 1 {
            let d = rho[i + 1] - rho[i];
            dl_drho[i] -= c * d;
            dl_drho[i + 1] += c * d;
        }
    }
    let scale = 1.0 / (weights.len() as f64 * dw);
    let grad = weights
        .iter()
        .map(|&w| {
            let a = assign_soft(w, config);
            let mut g = if a.sloped {
                (dl_drho[a.bin + 1] - dl_drho[a.bin]) * scale
            } else {
                0.0
            };
            if config.lambda > 0.0 {
                g += 2.0 * config.lambda * w;
            }
            g
        })
        .collect();
    Ok((energy, grad))
}

/// Location of one parameter's values inside a gathered weight vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightSpan {
    pub param_index: usize,
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Selected parameters flattened and concatenated in definition order.
#[derive(Debug, Clone, PartialEq)]
pub struct GatheredWeights {
    pub values: Vec<f64>,
    pub spans: Vec<WeightSpan>,
}

impl GatheredWeights {
    /// Adds `grad` (same layout as `values`) into the matching parameter gradients.
    pub fn scatter_grad(&self, params: &mut ParameterSet, grad: &[f64]) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::dim("scatter_grad", "numel", self.values.len(), grad.len()));
        }
        let mut entries: Vec<_> = params.iter_mut().collect();
        for span in &self.spans {
            let p = entries
                .get_mut(span.param_index)
                .ok_or_else(|| Error::config(format!("parameter {} no longer present", span.name)))?;
            if p.name != span.name || p.grad.len() != span.len {
                return Err(Error::config(format!("parameter layout changed for {}", span.name)));
            }
            for (g, s) in p.grad.data_mut().iter_mut().zip(&grad[span.offset..span.offset + span.len]) {
                *g += s;
            }
        }
        Ok(())
    }

    /// Gradients of the selected parameters in gathered order.
    pub fn gather_grads(&self, params: &ParameterSet) -> Vec<f64> {
        let entries = params.entries();
        self.spans
            .iter()
            .flat_map(|s| entries[s.param_index].grad.data().iter().copied())
            .collect()
    }
}

/// Flattens every parameter whose kind is in `filter`, in definition order.
pub fn gather_weights(params: &ParameterSet, filter: &[ParamKind]) -> Result<GatheredWeights> {
    let mut values = Vec::new();
    let mut spans = Vec::new();
    for (i, p) in params.iter().enumerate() {
        if filter.contains(&p.kind) {
            spans.push(WeightSpan {
                param_index: i,
                name: p.name.clone(),
                offset: values.len(),
                len: p.value.len(),
            });
            values.extend_from_slice(p.value.data());
        }
    }
    if spans.is_empty() {
        let kinds: Vec<_> = filter.iter().map(|k| k.as_str()).collect();
        return Err(Error::EmptySelection(format!("[{}]", kinds.join(", "))));
    }
    Ok(GatheredWeights { values, spans })
}
