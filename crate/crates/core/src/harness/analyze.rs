use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::density::{estimate_density, shannon_entropy, Binning, EnergyConfig, WeightDensity};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamKind;
use crate::spectral::{average_channel_spectrum, low_frequency_ratio, FilterSpectrum};

use super::train::LOG_BASE;

pub const ENTROPY_HEADER: &str = "layer,entropy,bins,mode,log_base";

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    /// Bin count and range; binning is always hard for reporting.
    pub energy: EnergyConfig,
    /// Layer selectors (`conv1` or `conv1.weight`); empty selects every conv layer.
    pub layers: Vec<String>,
    pub radius: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            energy: EnergyConfig::default(),
            layers: Vec::new(),
            radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAnalysis {
    pub name: String,
    pub density: WeightDensity,
    pub entropy: f64,
    pub spectrum: FilterSpectrum,
    pub low_frequency_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub layers: Vec<LayerAnalysis>,
}

fn selector_matches(selector: &str, name: &str) -> bool {
    name == selector || name.strip_suffix(".weight") == Some(selector)
}

/// File-name-safe form of a layer name (`conv1.weight` → `conv1_weight`).
pub fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

/// Per-layer hard-binned density, entropy and filter spectrum for every
/// selected convolution layer.
pub fn analyze_checkpoint(model: &Model, config: &AnalysisConfig) -> Result<Analysis> {
    let hard = config.energy.with_binning(Binning::Hard);
    hard.validate()?;
    let conv: Vec<_> = model.params.iter().filter(|p| p.kind == ParamKind::ConvKernel).collect();
    for sel in &config.layers {
        if !conv.iter().any(|p| selector_matches(sel, &p.name)) {
            let names: Vec<_> = conv.iter().map(|p| p.name.as_str()).collect();
            return Err(Error::config(format!(
                "layer selector {sel:?} matched nothing; available: {}",
                names.join(", ")
            )));
        }
    }
    let layers = conv
        .into_iter()
        .filter(|p| config.layers.is_empty() || config.layers.iter().any(|s| selector_matches(s, &p.name)))
        .map(|p| {
            let density = estimate_density(p.value.data(), &hard)?;
            let spectrum = average_channel_spectrum(&p.name, &p.value)?;
            Ok(LayerAnalysis {
                name: p.name.clone(),
                entropy: shannon_entropy(&density),
                low_frequency_ratio: low_frequency_ratio(&spectrum, config.radius),
                density,
                spectrum,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Analysis { layers })
}

impl Analysis {
    pub fn entropy_csv(&self) -> String {
        let mut out = String::from(ENTROPY_HEADER);
        out.push('\n');
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{},{},{},{},{LOG_BASE}",
                l.name,
                l.entropy,
                l.density.num_bins(),
                l.density.binning.as_str()
            );
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<&LayerAnalysis> {
        self.layers.iter().find(|l| selector_matches(name, &l.name))
    }

    /// Writes `entropy.csv`, `hist_<layer>.csv` and `spectrum_<layer>.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("entropy.csv"), self.entropy_csv())?;
        for l in &self.layers {
            let stem = file_stem(&l.name);
            fs::write(dir.join(format!("hist_{stem}.csv")), l.density.to_csv())?;
            fs::write(dir.join(format!("spectrum_{stem}.csv")), l.spectrum.to_csv())?;
        }
        Ok(())
    }
}
