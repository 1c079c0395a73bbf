//! The desk-scale CNN in its six regularization variants.
//!
//! ```text
//! [conv(k×k, same) → BN? → ReLU → maxpool2] × len(conv_channels)
//!   → flatten → Dropout? → dense → ReLU → dense(num_classes)
//! ```
//!
//! Each variant adds exactly one regularizing mechanism. The DFReg variants are
//! loss-only and share the parameter layout of their base architecture.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, BatchNormCache, Mode, RunningStats};
use crate::params::{ParamKind, ParameterSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    L2,
    Dropout,
    Batchnorm,
    Dfreg,
    DfregNoBn,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Plain,
        Variant::L2,
        Variant::Dropout,
        Variant::Batchnorm,
        Variant::Dfreg,
        Variant::DfregNoBn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::L2 => "l2",
            Variant::Dropout => "dropout",
            Variant::Batchnorm => "batchnorm",
            Variant::Dfreg => "dfreg",
            Variant::DfregNoBn => "dfreg_no_bn",
        }
    }

    pub fn has_batchnorm(self) -> bool {
        matches!(self, Variant::Batchnorm | Variant::Dfreg)
    }

    pub fn has_dropout(self) -> bool {
        self == Variant::Dropout
    }

    /// Whether training adds the density penalty.
    pub fn uses_density(self) -> bool {
        matches!(self, Variant::Dfreg | Variant::DfregNoBn)
    }

    pub fn uses_l2(self) -> bool {
        self == Variant::L2
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                Error::config(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub variant: Variant,
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub dropout_p: f64,
    pub dense_hidden: usize,
    pub num_classes: usize,
    pub in_channels: usize,
    pub image_size: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            variant: Variant::Plain,
            conv_channels: vec![16, 32],
            kernel_size: 3,
            dropout_p: 0.5,
            dense_hidden: 128,
            num_classes: 10,
            in_channels: 1,
            image_size: 28,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::config("conv_channels must be a non-empty list of positive sizes"));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::config(format!(
                "kernel_size must be odd (same padding), got {}",
                self.kernel_size
            )));
        }
        let shrink = 1usize << self.conv_channels.len();
        if self.image_size == 0 || !self.image_size.is_multiple_of(shrink) {
            return Err(Error::config(format!(
                "image_size {} must be divisible by {shrink} for {} pooling stages",
                self.image_size,
                self.conv_channels.len()
            )));
        }
        if self.num_classes < 2 || self.dense_hidden == 0 || self.in_channels == 0 {
            return Err(Error::config("num_classes >= 2, dense_hidden >= 1 and in_channels >= 1 required"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        if self.variant.has_dropout() && self.dropout_p == 0.0 {
            return Err(Error::config("variant dropout needs dropout_p > 0"));
        }
        Ok(())
    }

    fn flat_features(&self) -> usize {
        let side = self.image_size >> self.conv_channels.len();
        side * side * self.conv_channels.last().copied().unwrap_or(0)
    }

    /// Parameter names, kinds and shapes in definition order.
    pub fn layout(&self) -> Vec<(String, ParamKind, Vec<usize>)> {
        let k = self.kernel_size;
        let mut out = Vec::new();
        let mut cin = self.in_channels;
        for (i, &cout) in self.conv_channels.iter().enumerate() {
            let l = i + 1;
            out.push((format!("conv{l}.weight"), ParamKind::ConvKernel, vec![cout, cin, k, k]));
            out.push((format!("conv{l}.bias"), ParamKind::Bias, vec![cout]));
            if self.variant.has_batchnorm() {
                out.push((format!("bn{l}.weight"), ParamKind::BnGamma, vec![cout]));
                out.push((format!("bn{l}.bias"), ParamKind::BnBeta, vec![cout]));
            }
            cin = cout;
        }
        let f = self.flat_features();
        out.push(("fc1.weight".into(), ParamKind::DenseWeight, vec![self.dense_hidden, f]));
        out.push(("fc1.bias".into(), ParamKind::Bias, vec![self.dense_hidden]));
        out.push(("fc2.weight".into(), ParamKind::DenseWeight, vec![self.num_classes, self.dense_hidden]));
        out.push(("fc2.bias".into(), ParamKind::Bias, vec![self.num_classes]));
        out
    }

    /// Names of the convolution kernels, in order.
    pub fn conv_layer_names(&self) -> Vec<String> {
        (1..=self.conv_channels.len()).map(|l| format!("conv{l}.weight")).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockIndex {
    conv_w: usize,
    conv_b: usize,
    bn: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct Layout {
    blocks: Vec<BlockIndex>,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
}

impl Layout {
    fn resolve(spec: &ModelSpec, params: &ParameterSet) -> Result<Self> {
        let idx = |name: String| {
            params
                .index_of(&name)
                .ok_or_else(|| Error::config(format!("missing parameter {name}")))
        };
        let mut blocks = Vec::new();
        for l in 1..=spec.conv_channels.len() {
            blocks.push(BlockIndex {
                conv_w: idx(format!("conv{l}.weight"))?,
                conv_b: idx(format!("conv{l}.bias"))?,
                bn: if spec.variant.has_batchnorm() {
                    Some((idx(format!("bn{l}.weight"))?, idx(format!("bn{l}.bias"))?))
                } else {
                    None
                },
            });
        }
        Ok(Self {
            blocks,
            fc1_w: idx("fc1.weight".into())?,
            fc1_b: idx("fc1.bias".into())?,
            fc2_w: idx("fc2.weight".into())?,
            fc2_b: idx("fc2.bias".into())?,
        })
    }
}

/// Intermediate values kept by [`Model::forward`] for the backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    pooled_shape: Vec<usize>,
    dropout_mask: Option<Vec<f64>>,
    flat: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
}

#[derive(Debug)]
struct BlockCache {
    input: Tensor,
    bn: Option<BatchNormCache>,
    relu_in: Tensor,
    argmax: Vec<usize>,
}

/// Parameters, batch-norm running statistics, and the forward/backward wiring.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParameterSet,
    pub bn_stats: Vec<RunningStats>,
    layout: Layout,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params && self.bn_stats == other.bn_stats
    }
}

/// Builds the network for `spec`, initializing every weight and bias uniformly
/// in `±1/√fan_in` from a stream derived from `seed`. Batch-norm scales start
/// at 1 and shifts at 0.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = Rng::named(seed, "init");
    let mut params = ParameterSet::new();
    let layout = spec.layout();
    let mut fan_in = 0;
    for (name, kind, shape) in layout {
        let value = match kind {
            ParamKind::ConvKernel | ParamKind::DenseWeight => {
                fan_in = shape[1..].iter().product::<usize>();
                let bound = 1.0 / (fan_in as f64).sqrt();
                Tensor::uniform(&shape, -bound, bound, &mut rng)
            }
            // biases follow the weight defined just before them
            ParamKind::Bias => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                Tensor::uniform(&shape, -bound, bound, &mut rng)
            }
            ParamKind::BnGamma => Tensor::ones(&shape),
            ParamKind::BnBeta => Tensor::zeros(&shape),
        };
        params.push(name, kind, value)?;
    }
    Model::from_parts(spec.clone(), params, None)
}

impl Model {
    /// Assembles a model from existing parameters, checking them against the
    /// layout `spec` implies.
    pub fn from_parts(spec: ModelSpec, params: ParameterSet, bn_stats: Option<Vec<RunningStats>>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.layout();
        if expected.len() != params.len() {
            return Err(Error::config(format!(
                "model expects {} parameters, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, kind, shape), p) in expected.iter().zip(params.iter()) {
            if &p.name != name || p.kind != *kind {
                return Err(Error::config(format!("expected parameter {name}, found {}", p.name)));
            }
            p.value.expect_shape("model parameter", shape)?;
        }
        let n_bn = if spec.variant.has_batchnorm() { spec.conv_channels.len() } else { 0 };
        let bn_stats = match bn_stats {
            Some(s) => {
                if s.len() != n_bn {
                    return Err(Error::config(format!("expected {n_bn} batch-norm stat sets, got {}", s.len())));
                }
                for (st, &c) in s.iter().zip(&spec.conv_channels) {
                    if st.mean.len() != c || st.var.len() != c {
                        return Err(Error::dim("batch-norm stats", "channels", c, st.mean.len()));
                    }
                }
                s
            }
            None => spec.conv_channels.iter().take(n_bn).map(|&c| RunningStats::new(c)).collect(),
        };
        let layout = Layout::resolve(&spec, &params)?;
        Ok(Self { spec, params, bn_stats, layout })
    }

    /// Logits for `input: [N, C, H, W]`. `rng` drives dropout and is only
    /// consulted in train mode.
    pub fn forward(&mut self, input: &Tensor, mode: Mode, rng: Option<&mut Rng>) -> Result<(Tensor, ForwardCache)> {
        let size = self.spec.image_size;
        input.expect_shape("model input", &[input.shape().first().copied().unwrap_or(0), self.spec.in_channels, size, size])?;
        let pad = self.spec.kernel_size / 2;
        let mut x = input.clone();
        let mut blocks = Vec::with_capacity(self.layout.blocks.len());
        for (i, b) in self.layout.blocks.iter().enumerate() {
            let entries = self.params.entries();
            let conv = nn::conv2d(&x, &entries[b.conv_w].value, &entries[b.conv_b].value, pad, 1)?;
            let (pre, bn_cache) = match b.bn {
                Some((g, be)) => {
                    let (y, c) = nn::batch_norm2d(
                        &conv,
                        &entries[g].value,
                        &entries[be].value,
                        &mut self.bn_stats[i],
                        mode,
                        BN_EPSILON,
                        BN_MOMENTUM,
                    )?;
                    (y, Some(c))
                }
                None => (conv, None),
            };
            let act = nn::relu(&pre);
            let (pooled, argmax) = nn::max_pool2(&act)?;
            blocks.push(BlockCache {
                input: std::mem::replace(&mut x, pooled),
                bn: bn_cache,
                relu_in: pre,
                argmax,
            });
        }
        let pooled_shape = x.shape().to_vec();
        let n = pooled_shape[0];
        let flat = x.reshape(&[n, self.spec.flat_features()])?;
        let (flat, dropout_mask) = if self.spec.variant.has_dropout() && mode == Mode::Train {
            let rng = rng.ok_or_else(|| Error::config("dropout in train mode needs an rng"))?;
            nn::dropout(&flat, self.spec.dropout_p, mode, rng)?
        } else {
            (flat, None)
        };
        let entries = self.params.entries();
        let hidden_pre = nn::dense(&flat, &entries[self.layout.fc1_w].value, &entries[self.layout.fc1_b].value)?;
        let hidden = nn::relu(&hidden_pre);
        let logits = nn::dense(&hidden, &entries[self.layout.fc2_w].value, &entries[self.layout.fc2_b].value)?;
        Ok((
            logits,
            ForwardCache {
                blocks,
                pooled_shape,
                dropout_mask,
                flat,
                hidden_pre,
                hidden,
            },
        ))
    }

    /// Accumulates parameter gradients for `grad_logits` into `self.params`.
    pub fn backward(&mut self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<()> {
        let l = self.layout.clone();
        let fc2 = nn::dense_backward(&cache.hidden, &self.params.entries()[l.fc2_w].value, grad_logits)?;
        self.add_grad(l.fc2_w, &fc2.weight)?;
        self.add_grad(l.fc2_b, &fc2.bias)?;
        let g_hidden = nn::relu_backward(&cache.hidden_pre, &fc2.input)?;
        let fc1 = nn::dense_backward(&cache.flat, &self.params.entries()[l.fc1_w].value, &g_hidden)?;
        self.add_grad(l.fc1_w, &fc1.weight)?;
        self.add_grad(l.fc1_b, &fc1.bias)?;
        let g_flat = nn::dropout_backward(&fc1.input, cache.dropout_mask.as_deref());
        let mut g = g_flat.reshape(&cache.pooled_shape)?;
        let pad = self.spec.kernel_size / 2;
        for (b, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
            let g_act = nn::max_pool2_backward(bc.relu_in.shape(), &bc.argmax, &g)?;
            let g_pre = nn::relu_backward(&bc.relu_in, &g_act)?;
            let g_conv = match (b.bn, &bc.bn) {
                (Some((gi, bi)), Some(bn_cache)) => {
                    let bg = nn::batch_norm2d_backward(bn_cache, &self.params.entries()[gi].value, &g_pre)?;
                    self.add_grad(gi, &bg.gamma)?;
                    self.add_grad(bi, &bg.beta)?;
                    bg.input
                }
                _ => g_pre,
            };
            let cg = nn::conv2d_backward(&bc.input, &self.params.entries()[b.conv_w].value, &g_conv, pad, 1)?;
            self.add_grad(b.conv_w, &cg.kernel)?;
            self.add_grad(b.conv_b, &cg.bias)?;
            g = cg.input;
        }
        Ok(())
    }

    fn add_grad(&mut self, index: usize, grad: &Tensor) -> Result<()> {
        let p = self.params.iter_mut().nth(index).expect("layout index");
        p.grad.add_assign(grad)
    }

    /// Eval-mode logits, computed in chunks of `chunk` samples.
    pub fn predict(&mut self, images: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = images.shape()[0];
        let per: usize = images.shape()[1..].iter().product();
        let mut out = Vec::with_capacity(n * self.spec.num_classes);
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let mut shape = images.shape().to_vec();
            shape[0] = end - start;
            let x = Tensor::new(shape, images.data()[start * per..end * per].to_vec())?;
            let (logits, _) = self.forward(&x, Mode::Eval, None)?;
            out.extend_from_slice(logits.data());
            start = end;
        }
        Tensor::new(vec![n, self.spec.num_classes], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradient_check;

    fn tiny(variant: Variant) -> ModelSpec {
        ModelSpec {
            variant,
            conv_channels: vec![2, 3],
            dense_hidden: 5,
            num_classes: 3,
            image_size: 8,
            dropout_p: 0.5,
            ..ModelSpec::default()
        }
    }

    #[test]
    fn dfreg_variants_share_plain_layout() {
        let plain = build_model(&ModelSpec::default(), 1).unwrap();
        let dfreg = build_model(&ModelSpec { variant: Variant::DfregNoBn, ..ModelSpec::default() }, 1).unwrap();
        assert_eq!(plain.params, dfreg.params);
        let bn = build_model(&ModelSpec { variant: Variant::Batchnorm, ..ModelSpec::default() }, 1).unwrap();
        let dfreg_bn = build_model(&ModelSpec { variant: Variant::Dfreg, ..ModelSpec::default() }, 1).unwrap();
        assert_eq!(bn.params.names(), dfreg_bn.params.names());
    }

    #[test]
    fn batchnorm_adds_affine_params() {
        let bn = build_model(&ModelSpec { variant: Variant::Batchnorm, ..ModelSpec::default() }, 1).unwrap();
        let names = bn.params.names();
        for n in ["bn1.weight", "bn1.bias", "bn2.weight", "bn2.bias"] {
            assert!(names.contains(&n));
        }
        assert_eq!(bn.params.get("bn2.weight").unwrap().kind, ParamKind::BnGamma);
        let plain = build_model(&ModelSpec::default(), 1).unwrap();
        assert_eq!(bn.params.len(), plain.params.len() + 4);
        assert!(plain.params.iter().all(|p| !matches!(p.kind, ParamKind::BnGamma | ParamKind::BnBeta)));
    }

    #[test]
    fn default_shapes() {
        let m = build_model(&ModelSpec::default(), 0).unwrap();
        assert_eq!(m.params.value("conv1.weight").unwrap().shape(), &[16, 1, 3, 3]);
        assert_eq!(m.params.value("conv2.weight").unwrap().shape(), &[32, 16, 3, 3]);
        assert_eq!(m.params.value("fc1.weight").unwrap().shape(), &[128, 32 * 7 * 7]);
        assert_eq!(m.params.value("fc2.weight").unwrap().shape(), &[10, 128]);
        let bound = 1.0 / 3.0;
        assert!(m.params.value("conv1.weight").unwrap().data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn same_seed_same_init() {
        let a = build_model(&ModelSpec::default(), 42).unwrap();
        let b = build_model(&ModelSpec::default(), 42).unwrap();
        assert_eq!(a, b);
        let c = build_model(&ModelSpec::default(), 43).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn invalid_specs() {
        assert!(build_model(&ModelSpec { kernel_size: 4, ..ModelSpec::default() }, 0).is_err());
        assert!(build_model(&ModelSpec { image_size: 30, ..ModelSpec::default() }, 0).is_err());
        assert!(build_model(&ModelSpec { variant: Variant::Dropout, dropout_p: 0.0, ..ModelSpec::default() }, 0).is_err());
        assert!(build_model(&ModelSpec { conv_channels: vec![], ..ModelSpec::default() }, 0).is_err());
        assert!("resnet".parse::<Variant>().is_err());
    }

    /// Whole-network gradient against finite differences, per parameter tensor.
    fn check_model_grads(variant: Variant) {
        let spec = tiny(variant);
        let mut model = build_model(&spec, 3).unwrap();
        let mut rng = Rng::new(9);
        let x = Tensor::uniform(&[4, 1, 8, 8], 0.0, 1.0, &mut rng);
        let labels = vec![0, 2, 1, 2];
        let names: Vec<String> = model.params.names().iter().map(|s| s.to_string()).collect();
        for name in names {
            let base = model.clone();
            let value = base.params.value(&name).unwrap().clone();
            let f = |v: &Tensor| {
                let mut m = base.clone();
                m.params.get_mut(&name).unwrap().value = v.clone();
                m.params.zero_grad();
                let (logits, cache) = m.forward(&x, Mode::Train, Some(&mut Rng::new(77)))?;
                let (loss, g) = nn::softmax_cross_entropy(&logits, &labels, 0.1)?;
                m.backward(&cache, &g)?;
                Ok((loss, m.params.get(&name).unwrap().grad.clone()))
            };
            if variant.has_batchnorm() && name.starts_with("conv") && name.ends_with(".bias") {
                // a per-channel shift ahead of train-mode batch norm cancels exactly
                let (_, g) = f(&value).unwrap();
                assert!(g.data().iter().all(|v| v.abs() < 1e-12), "{name}: {:?}", g.data());
                continue;
            }
            let r = gradient_check(f, &value, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-4, "{variant:?} {name}: {}", r.max_rel_error);
        }
        model.params.zero_grad();
    }

    #[test]
    fn plain_network_gradients() {
        check_model_grads(Variant::Plain);
    }

    #[test]
    fn batchnorm_network_gradients() {
        check_model_grads(Variant::Batchnorm);
    }

    #[test]
    fn dropout_network_gradients() {
        check_model_grads(Variant::Dropout);
    }
}
