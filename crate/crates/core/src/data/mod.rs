//! Datasets: IDX (MNIST-format) files, a synthetic generator, and augmentation.

mod augment;
mod idx;
mod synth;

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment_flip, flip_with_mask};
pub use idx::{encode_idx, parse_idx, parse_idx_raw, IdxArray, DTYPE_U8};
pub use synth::synth_dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, 1, H, W]`, values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        images.expect_rank("dataset images", 4)?;
        if images.shape()[0] != labels.len() {
            return Err(Error::dim("dataset", "samples", images.shape()[0], labels.len()));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange { index, label, classes: num_classes });
        }
        Ok(Self { images, labels, num_classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(H, W)` of each image.
    pub fn image_size(&self) -> (usize, usize) {
        (self.images.shape()[2], self.images.shape()[3])
    }

    /// Images and labels for the given sample indices, in that order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per = self.images.shape()[1..].iter().product::<usize>();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        let images = Tensor::new(shape, data).expect("batch shape");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// The first `n` samples (or all of them when `n >= len`).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, labels) = self.batch(&idx);
        Dataset {
            images,
            labels,
            num_classes: self.num_classes,
            split: self.split,
        }
    }
}

fn read_maybe_gz(base: &Path) -> Result<Vec<u8>> {
    let gz = PathBuf::from(format!("{}.gz", base.display()));
    if base.exists() {
        Ok(fs::read(base)?)
    } else if gz.exists() {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(fs::File::open(&gz)?).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Err(Error::config(format!(
            "dataset file not found: {} (or {})",
            base.display(),
            gz.display()
        )))
    }
}

/// Reads an IDX file, transparently decompressing a `.gz` sibling.
pub fn read_idx_file(path: &Path) -> Result<IdxArray> {
    let bytes = read_maybe_gz(path)?;
    parse_idx(&bytes).map_err(|e| e.with_context(format!("parsing {}", path.display())))
}

/// Loads the standard MNIST file pair for `split` from `dir`
/// (`train-*` or `t10k-*`, raw or gzip-compressed).
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = match read_idx_file(&dir.join(format!("{prefix}-images-idx3-ubyte")))? {
        IdxArray::Images(t) if t.rank() == 3 => {
            let (n, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            t.reshape(&[n, 1, h, w])?
        }
        other => return Err(Error::config(format!("expected a rank-3 image file, got dims {:?}", other.dims()))),
    };
    let labels = match read_idx_file(&dir.join(format!("{prefix}-labels-idx1-ubyte")))? {
        IdxArray::Labels(l) => l,
        other => return Err(Error::config(format!("expected a label file, got dims {:?}", other.dims()))),
    };
    Dataset::new(images, labels, 10, split)
}
