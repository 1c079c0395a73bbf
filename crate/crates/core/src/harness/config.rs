use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::sha256_hex;
use crate::data::{load_mnist, synth_dataset, Dataset, Split};
use crate::density::{Binning, EnergyConfig};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Variant};
use crate::optim::OptimizerKind;
use crate::schedule::ScheduleKind;

/// Layer sizes of the network; class count and image size come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub dropout_p: f64,
    pub dense_hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        let spec = ModelSpec::default();
        Self {
            conv_channels: spec.conv_channels,
            kernel_size: spec.kernel_size,
            dropout_p: spec.dropout_p,
            dense_hidden: spec.dense_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Floor of the cosine schedule.
    pub lr_min: f64,
    pub optimizer: OptimizerKind,
    pub schedule: ScheduleKind,
    pub smoothing: f64,
    pub energy: EnergyConfig,
    pub seed: u64,
    /// `mnist:<dir>`, `synth`, or `synth:<classes>x<size>`.
    pub dataset: Option<String>,
    pub out: Option<PathBuf>,
    pub model: Architecture,
    pub augment_flip: bool,
    /// Use only the first `n` training samples.
    pub train_samples: Option<usize>,
    pub test_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Plain,
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
            lr_min: 0.0,
            optimizer: OptimizerKind::adam_default(),
            schedule: ScheduleKind::CosineAnnealing,
            smoothing: 0.1,
            energy: EnergyConfig::default(),
            seed: 0,
            dataset: None,
            out: None,
            model: Architecture::default(),
            augment_flip: false,
            train_samples: None,
            test_samples: None,
        }
    }
}

/// Where training and test data come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Mnist(PathBuf),
    Synth { classes: usize, size: usize },
}

pub const SYNTH_DEFAULT_CLASSES: usize = 4;
pub const SYNTH_DEFAULT_SIZE: usize = 28;
pub const SYNTH_DEFAULT_TRAIN: usize = 2000;
pub const SYNTH_DEFAULT_TEST: usize = 500;

impl DatasetSource {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(dir) = s.strip_prefix("mnist:") {
            if dir.is_empty() {
                return Err(Error::config("dataset: mnist source needs a directory (mnist:<dir>)"));
            }
            return Ok(DatasetSource::Mnist(PathBuf::from(dir)));
        }
        if s == "synth" {
            return Ok(DatasetSource::Synth {
                classes: SYNTH_DEFAULT_CLASSES,
                size: SYNTH_DEFAULT_SIZE,
            });
        }
        if let Some(spec) = s.strip_prefix("synth:") {
            let parsed = spec
                .split_once('x')
                .and_then(|(k, n)| Some((k.parse::<usize>().ok()?, n.parse::<usize>().ok()?)));
            if let Some((classes, size)) = parsed {
                if classes >= 2 && size >= 4 {
                    return Ok(DatasetSource::Synth { classes, size });
                }
            }
            return Err(Error::config(format!(
                "dataset: bad synth spec {spec:?}; expected <classes>x<size> with classes >= 2"
            )));
        }
        Err(Error::config(format!(
            "dataset: unknown source {s:?}; expected mnist:<dir> or synth"
        )))
    }
}

impl TrainConfig {
    /// Reads a TOML (`.toml`) or JSON file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        if is_toml {
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
        } else {
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the resolved configuration's JSON form. The output
    /// directory is excluded so relocated runs hash the same.
    pub fn hash(&self) -> String {
        let c = TrainConfig { out: None, ..self.clone() };
        sha256_hex(c.to_json().as_bytes())
    }

    pub fn dataset_source(&self) -> Result<DatasetSource> {
        match &self.dataset {
            Some(s) => DatasetSource::parse(s),
            None => Err(Error::config("missing required field `dataset` (mnist:<dir> or synth)")),
        }
    }

    /// Whether training adds the density penalty at all.
    pub fn density_active(&self) -> bool {
        self.energy.alpha > 0.0 || self.energy.kinetic_coeff > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        self.energy.validate()?;
        self.dataset_source()?;
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.variant.has_batchnorm() && self.batch_size < 2 {
            return Err(Error::config(format!("batch_size must be >= 2 for variant {}", self.variant)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be a positive finite number, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::config(format!("smoothing must be in [0, 1), got {}", self.smoothing)));
        }
        if self.density_active() && !self.variant.uses_density() {
            return Err(Error::config(format!(
                "alpha/kinetic_coeff > 0 requires variant dfreg or dfreg_no_bn, got {} (hybrid configurations are not supported)",
                self.variant
            )));
        }
        if self.energy.lambda > 0.0 && !self.variant.uses_l2() {
            return Err(Error::config(format!(
                "lambda > 0 requires variant l2, got {} (hybrid configurations are not supported)",
                self.variant
            )));
        }
        if self.density_active() && self.energy.binning != Binning::SoftTriangular {
            return Err(Error::config("training with the density penalty requires soft_triangular binning"));
        }
        if self.train_samples == Some(0) || self.test_samples == Some(0) {
            return Err(Error::config("train_samples and test_samples must be >= 1 when set"));
        }
        Ok(())
    }

    pub fn model_spec(&self, num_classes: usize, image_size: usize) -> ModelSpec {
        ModelSpec {
            variant: self.variant,
            conv_channels: self.model.conv_channels.clone(),
            kernel_size: self.model.kernel_size,
            dropout_p: self.model.dropout_p,
            dense_hidden: self.model.dense_hidden,
            num_classes,
            in_channels: 1,
            image_size,
        }
    }

    /// Training and test splits, truncated to the configured sample counts.
    pub fn load_datasets(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match self.dataset_source()? {
            DatasetSource::Mnist(dir) => (load_mnist(&dir, Split::Train)?, load_mnist(&dir, Split::Test)?),
            DatasetSource::Synth { classes, size } => (
                synth_dataset(
                    self.seed,
                    self.train_samples.unwrap_or(SYNTH_DEFAULT_TRAIN),
                    classes,
                    size,
                    Split::Train,
                ),
                synth_dataset(
                    self.seed,
                    self.test_samples.unwrap_or(SYNTH_DEFAULT_TEST),
                    classes,
                    size,
                    Split::Test,
                ),
            ),
        };
        let train = match self.train_samples {
            Some(n) => train.take(n),
            None => train,
        };
        let test = match self.test_samples {
            Some(n) => test.take(n),
            None => test,
        };
        if train.is_empty() || test.is_empty() {
            return Err(Error::config("dataset: training and test splits must be non-empty"));
        }
        Ok((train, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> TrainConfig {
        TrainConfig {
            dataset: Some("synth".into()),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.lr, c.smoothing), (10, 64, 1e-3, 0.1));
        assert_eq!(c.optimizer, OptimizerKind::adam_default());
        assert_eq!(c.schedule, ScheduleKind::CosineAnnealing);
        assert_eq!(c.energy.num_bins, 80);
    }

    #[test]
    fn missing_dataset_names_field() {
        let err = TrainConfig::default().validate().unwrap_err();
        assert!(err.to_string().contains("dataset"), "{err}");
    }

    #[test]
    fn hybrids_rejected() {
        let mut c = base();
        c.energy.alpha = 1e-3;
        assert!(c.validate().is_err());
        c.variant = Variant::Dfreg;
        c.validate().unwrap();
        c.energy.lambda = 1e-4;
        assert!(c.validate().is_err());
        let mut c = base();
        c.variant = Variant::L2;
        c.energy.lambda = 1e-4;
        c.validate().unwrap();
    }

    #[test]
    fn hard_binning_training_rejected() {
        let mut c = base();
        c.variant = Variant::DfregNoBn;
        c.energy.alpha = 1e-3;
        c.energy.binning = Binning::Hard;
        assert!(c.validate().is_err());
    }

    #[test]
    fn batchnorm_needs_two_samples() {
        let mut c = base();
        c.variant = Variant::Batchnorm;
        c.batch_size = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        fs::write(
            &t,
            "variant = \"dfreg_no_bn\"\nepochs = 3\ndataset = \"synth:3x16\"\n[energy]\nalpha = 0.001\n",
        )
        .unwrap();
        let c = TrainConfig::from_path(&t).unwrap();
        assert_eq!(c.variant, Variant::DfregNoBn);
        assert_eq!(c.energy.alpha, 1e-3);
        assert_eq!(c.dataset_source().unwrap(), DatasetSource::Synth { classes: 3, size: 16 });
        let j = dir.path().join("c.json");
        fs::write(&j, c.to_json()).unwrap();
        assert_eq!(TrainConfig::from_path(&j).unwrap(), c);
    }

    #[test]
    fn unknown_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        fs::write(&t, "epochz = 3\n").unwrap();
        assert!(TrainConfig::from_path(&t).is_err());
    }

    #[test]
    fn dataset_sources() {
        assert_eq!(DatasetSource::parse("mnist:/d").unwrap(), DatasetSource::Mnist("/d".into()));
        assert!(DatasetSource::parse("mnist:").is_err());
        assert!(DatasetSource::parse("cifar").is_err());
        assert!(DatasetSource::parse("synth:1x8").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = base();
        let mut b = base();
        assert_eq!(a.hash(), b.hash());
        b.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
