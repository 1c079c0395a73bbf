use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint, CheckpointMeta};
use crate::data::{flip_with_mask, Dataset};
use crate::density::{
    dfreg_energy, dfreg_loss, estimate_density, gather_weights, interaction_energy, shannon_entropy, Binning,
    EnergyConfig,
};
use crate::error::{Error, Result};
use crate::model::{build_model, Model};
use crate::nn::{self, Mode};
use crate::optim::OptimizerState;
use crate::params::{ParamKind, ParameterSet};
use crate::rng::Rng;
use crate::schedule::LrSchedule;
use crate::tensor::Tensor;

use super::config::TrainConfig;

pub const METRICS_HEADER: &str =
    "epoch,variant,seed,train_loss,task_loss,dfreg_loss,test_loss,test_acc,entropy_global,sum_rho_sq,lr";
pub const LAYER_ENTROPY_HEADER: &str = "epoch,layer,entropy,bins,mode,log_base";
pub const LOG_BASE: &str = "e";
const EVAL_CHUNK: usize = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntropy {
    pub name: String,
    pub entropy: f64,
    pub bins: usize,
    pub mode: Binning,
}

/// One epoch's diagnostics. Epoch 0 describes the initial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub variant: String,
    pub seed: u64,
    pub train_loss: f64,
    pub task_loss: f64,
    pub dfreg_loss: f64,
    /// `λ·Σw²`; not part of the CSV, but included in `train_loss`.
    pub l2_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub entropy_global: f64,
    pub sum_rho_sq: f64,
    pub layer_entropy: Vec<LayerEntropy>,
    pub lr: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.variant,
            self.seed,
            self.train_loss,
            self.task_loss,
            self.dfreg_loss,
            self.test_loss,
            self.test_accuracy,
            self.entropy_global,
            self.sum_rho_sq,
            self.lr
        )
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn layer_entropy_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(LAYER_ENTROPY_HEADER);
    out.push('\n');
    for r in records {
        for l in &r.layer_entropy {
            let _ = writeln!(out, "{},{},{},{},{},{LOG_BASE}", r.epoch, l.name, l.entropy, l.bins, l.mode.as_str());
        }
    }
    out
}

/// Position of a step inside a run, attached to errors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepContext {
    pub epoch: usize,
    pub step: usize,
}

impl StepContext {
    fn numeric(&self, param: Option<String>, message: impl Into<String>) -> Error {
        Error::Numeric {
            epoch: self.epoch,
            step: self.step,
            param,
            message: message.into(),
        }
    }

    fn wrap(&self, e: Error) -> Error {
        if matches!(e, Error::Numeric { .. }) {
            e
        } else {
            e.with_context(format!("epoch {}, step {}", self.epoch, self.step))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepMetrics {
    pub task_loss: f64,
    pub dfreg_loss: f64,
    pub l2_loss: f64,
    pub lr: f64,
}

impl StepMetrics {
    pub fn total(&self) -> f64 {
        self.task_loss + self.dfreg_loss + self.l2_loss
    }
}

/// Regularizer contribution of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Penalty {
    pub dfreg: f64,
    pub l2: f64,
}

/// Adds the configured penalty gradients into `params` and returns their values.
///
/// The density penalty covers all convolution kernels jointly; the L2 penalty
/// covers convolution kernels and dense weights. Neither touches the density
/// module when its coefficient is zero.
pub fn apply_penalty(params: &mut ParameterSet, config: &TrainConfig) -> Result<Penalty> {
    let mut penalty = Penalty::default();
    if config.density_active() {
        let gathered = gather_weights(params, &[ParamKind::ConvKernel])?;
        let energy = EnergyConfig {
            lambda: 0.0,
            ..config.energy
        };
        let (breakdown, grad) = dfreg_loss(&gathered.values, &energy)?;
        gathered.scatter_grad(params, &grad)?;
        penalty.dfreg = breakdown.dfreg_loss;
    }
    let lambda = config.energy.lambda;
    if lambda > 0.0 {
        for p in params.iter_mut() {
            if matches!(p.kind, ParamKind::ConvKernel | ParamKind::DenseWeight) {
                penalty.l2 += lambda * p.value.sum_sq();
                for (g, w) in p.grad.data_mut().iter_mut().zip(p.value.data()) {
                    *g += 2.0 * lambda * w;
                }
            }
        }
    }
    Ok(penalty)
}

fn check_grads(params: &ParameterSet, ctx: StepContext) -> Result<()> {
    for p in params.iter() {
        if let Some(i) = p.grad.first_non_finite() {
            return Err(ctx.numeric(Some(p.name.clone()), format!("non-finite gradient at element {i}")));
        }
    }
    Ok(())
}

/// One optimization step on a batch: task loss, optional penalty, update.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Model,
    images: &Tensor,
    labels: &[usize],
    config: &TrainConfig,
    optimizer: &mut OptimizerState,
    lr: f64,
    rng: &mut Rng,
    ctx: StepContext,
) -> Result<StepMetrics> {
    model.params.zero_grad();
    let (logits, cache) = model.forward(images, Mode::Train, Some(rng)).map_err(|e| ctx.wrap(e))?;
    let (task_loss, grad) = nn::softmax_cross_entropy(&logits, labels, config.smoothing).map_err(|e| ctx.wrap(e))?;
    if !task_loss.is_finite() {
        return Err(ctx.numeric(None, format!("task loss is {task_loss}")));
    }
    model.backward(&cache, &grad).map_err(|e| ctx.wrap(e))?;
    let penalty = apply_penalty(&mut model.params, config).map_err(|e| ctx.wrap(e))?;
    if !(penalty.dfreg.is_finite() && penalty.l2.is_finite()) {
        return Err(ctx.numeric(None, "penalty is not finite"));
    }
    check_grads(&model.params, ctx)?;
    optimizer.step(&mut model.params, lr).map_err(|e| ctx.wrap(e))?;
    for p in model.params.iter() {
        if let Some(i) = p.value.first_non_finite() {
            return Err(ctx.numeric(Some(p.name.clone()), format!("non-finite value at element {i} after update")));
        }
    }
    Ok(StepMetrics {
        task_loss,
        dfreg_loss: penalty.dfreg,
        l2_loss: penalty.l2,
        lr,
    })
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean unsmoothed cross-entropy and accuracy from precomputed logits.
pub fn score_logits(logits: &Tensor, labels: &[usize]) -> Result<(f64, f64)> {
    if labels.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    let (loss, _) = nn::softmax_cross_entropy(logits, labels, 0.0)?;
    let k = logits.shape()[1];
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(&logits.data()[i * k..(i + 1) * k]) == y)
        .count();
    Ok((loss, correct as f64 / labels.len() as f64))
}

/// Eval-mode `(mean loss, accuracy)` over the whole dataset.
pub fn evaluate(model: &mut Model, dataset: &Dataset) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    let logits = model.predict(&dataset.images, EVAL_CHUNK)?;
    score_logits(&logits, &dataset.labels)
}

/// Hard-binned entropy of all convolution kernels jointly and of each layer.
pub fn conv_entropy(params: &ParameterSet, energy: &EnergyConfig) -> Result<(f64, f64, Vec<LayerEntropy>)> {
    let hard = (*energy).with_binning(Binning::Hard);
    let all = gather_weights(params, &[ParamKind::ConvKernel])?;
    let global = estimate_density(&all.values, &hard)?;
    let layers = params
        .iter()
        .filter(|p| p.kind == ParamKind::ConvKernel)
        .map(|p| {
            let d = estimate_density(p.value.data(), &hard)?;
            Ok(LayerEntropy {
                name: p.name.clone(),
                entropy: shannon_entropy(&d),
                bins: hard.num_bins,
                mode: Binning::Hard,
            })
        })
        .collect::<Result<_>>()?;
    Ok((shannon_entropy(&global), interaction_energy(&global), layers))
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub records: Vec<MetricsRecord>,
    pub metrics_csv: String,
}

#[allow(clippy::too_many_arguments)]
fn record(
    epoch: usize,
    config: &TrainConfig,
    model: &mut Model,
    test: &Dataset,
    task_loss: f64,
    dfreg_loss: f64,
    l2_loss: f64,
    train_loss: f64,
    lr: f64,
) -> Result<MetricsRecord> {
    let (test_loss, test_accuracy) = evaluate(model, test)?;
    let (entropy_global, sum_rho_sq, layer_entropy) = conv_entropy(&model.params, &config.energy)?;
    Ok(MetricsRecord {
        epoch,
        variant: config.variant.as_str().to_string(),
        seed: config.seed,
        train_loss,
        task_loss,
        dfreg_loss,
        l2_loss,
        test_loss,
        test_accuracy,
        entropy_global,
        sum_rho_sq,
        layer_entropy,
        lr,
    })
}

/// Trains a fresh model on in-memory data. Fully determined by `config`
/// (including its seed) and the datasets.
pub fn train_model(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<TrainingOutcome> {
    config.validate()?;
    let (h, w) = train.image_size();
    if h != w {
        return Err(Error::config(format!("images must be square, got {h}x{w}")));
    }
    if test.image_size() != (h, w) || test.num_classes != train.num_classes {
        return Err(Error::config("training and test splits disagree on image size or class count"));
    }
    let spec = config.model_spec(train.num_classes, h);
    let mut model = build_model(&spec, config.seed)?;
    let mut optimizer = OptimizerState::new(config.optimizer, &model.params);
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs) as u64;
    let schedule = LrSchedule::new(config.schedule, config.lr, config.lr_min.min(config.lr), total_steps)?;

    let mut shuffle_rng = Rng::named(config.seed, "shuffle");
    let mut dropout_rng = Rng::named(config.seed, "dropout");
    let mut augment_rng = Rng::named(config.seed, "augment");

    let mut records = Vec::with_capacity(config.epochs + 1);
    {
        // epoch 0: the initial model, with the smoothed task loss over the training set
        let logits = model.predict(&train.images, EVAL_CHUNK)?;
        let (task, _) = nn::softmax_cross_entropy(&logits, &train.labels, config.smoothing)?;
        let penalty = initial_penalty(&model.params, config)?;
        let lr = schedule.lr(0)?;
        records.push(record(0, config, &mut model, test, task, penalty.dfreg, penalty.l2, task + penalty.dfreg + penalty.l2, lr)?);
    }

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut global_step = 0u64;
    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        let (mut task_sum, mut dfreg_sum, mut l2_sum, mut total_sum) = (0.0, 0.0, 0.0, 0.0);
        let mut lr = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let (mut images, labels) = train.batch(batch);
            if config.augment_flip {
                let mask: Vec<bool> = (0..batch.len()).map(|_| augment_rng.bernoulli(0.5)).collect();
                images = flip_with_mask(&images, &mask)?;
            }
            lr = schedule.lr(global_step)?;
            let ctx = StepContext { epoch, step };
            let m = train_step(&mut model, &images, &labels, config, &mut optimizer, lr, &mut dropout_rng, ctx)?;
            task_sum += m.task_loss;
            dfreg_sum += m.dfreg_loss;
            l2_sum += m.l2_loss;
            total_sum += m.total();
            global_step += 1;
        }
        let n = steps_per_epoch as f64;
        records.push(record(epoch, config, &mut model, test, task_sum / n, dfreg_sum / n, l2_sum / n, total_sum / n, lr)?);
    }

    let meta = CheckpointMeta {
        step: global_step,
        config_hash: config.hash(),
    };
    let checkpoint = save_checkpoint(&model, &meta);
    let metrics_csv = metrics_csv(&records);
    Ok(TrainingOutcome {
        model,
        checkpoint,
        records,
        metrics_csv,
    })
}

fn initial_penalty(params: &ParameterSet, config: &TrainConfig) -> Result<Penalty> {
    let mut penalty = Penalty::default();
    if config.density_active() {
        let gathered = gather_weights(params, &[ParamKind::ConvKernel])?;
        let energy = EnergyConfig {
            lambda: 0.0,
            ..config.energy
        };
        penalty.dfreg = dfreg_energy(&gathered.values, &energy)?.0.dfreg_loss;
    }
    if config.energy.lambda > 0.0 {
        penalty.l2 = params
            .iter()
            .filter(|p| matches!(p.kind, ParamKind::ConvKernel | ParamKind::DenseWeight))
            .map(|p| config.energy.lambda * p.value.sum_sq())
            .sum();
    }
    Ok(penalty)
}

/// Writes `config.json`, `metrics.csv`, `layer_entropy.csv`, `model.json` and
/// `model.bin` into `dir`.
pub fn write_run_dir(dir: &Path, config: &TrainConfig, outcome: &TrainingOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), config.to_json())?;
    fs::write(dir.join("metrics.csv"), &outcome.metrics_csv)?;
    fs::write(dir.join("layer_entropy.csv"), layer_entropy_csv(&outcome.records))?;
    outcome.checkpoint.write_dir(dir)
}

/// Loads the configured data, trains, and writes the run directory when
/// `config.out` is set.
pub fn run_training(config: &TrainConfig) -> Result<TrainingOutcome> {
    config.validate()?;
    let (train, test) = config.load_datasets()?;
    let outcome = train_model(config, &train, &test)?;
    if let Some(dir) = &config.out {
        write_run_dir(dir, config, &outcome)?;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, Variant};

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[-1.0, -2.0]), 0);
    }

    #[test]
    fn hand_set_logits() {
        // predictions: 1, 0 (tie), 2, 1 ; labels 1, 0, 1, 1 -> 3 of 4
        let logits = Tensor::new(
            vec![4, 3],
            vec![0.0, 2.0, 1.0, 5.0, 5.0, 0.0, 0.0, 1.0, 3.0, -1.0, 0.5, 0.2],
        )
        .unwrap();
        let (_, acc) = score_logits(&logits, &[1, 0, 1, 1]).unwrap();
        assert_eq!(acc, 0.75);
    }

    #[test]
    fn empty_dataset_errors() {
        let logits = Tensor::zeros(&[0, 3]);
        assert!(score_logits(&logits, &[]).is_err());
    }

    #[test]
    fn penalty_gradient_decomposes() {
        let mut model = build_model(&ModelSpec { variant: Variant::DfregNoBn, ..ModelSpec::default() }, 2).unwrap();
        let mut rng = Rng::new(4);
        for p in model.params.iter_mut() {
            for g in p.grad.data_mut() {
                *g = rng.uniform_range(-1.0, 1.0);
            }
        }
        let before = model.params.clone();
        let config = TrainConfig {
            variant: Variant::DfregNoBn,
            energy: EnergyConfig { alpha: 1e-3, ..EnergyConfig::default() },
            ..TrainConfig::default()
        };
        apply_penalty(&mut model.params, &config).unwrap();
        let gathered = gather_weights(&before, &[ParamKind::ConvKernel]).unwrap();
        let (_, pen) = dfreg_loss(&gathered.values, &config.energy).unwrap();
        let mut offset = 0;
        for (a, b) in before.iter().zip(model.params.iter()) {
            if a.kind == ParamKind::ConvKernel {
                for (i, (ga, gb)) in a.grad.data().iter().zip(b.grad.data()).enumerate() {
                    assert!((gb - (ga + pen[offset + i])).abs() <= 1e-12);
                }
                offset += a.value.len();
            } else {
                assert_eq!(a.grad, b.grad);
            }
        }
    }

    #[test]
    fn l2_penalty_value_and_gradient() {
        let mut model = build_model(&ModelSpec { variant: Variant::L2, ..ModelSpec::default() }, 2).unwrap();
        let config = TrainConfig {
            variant: Variant::L2,
            energy: EnergyConfig { lambda: 0.5, ..EnergyConfig::default() },
            ..TrainConfig::default()
        };
        let expected: f64 = model
            .params
            .iter()
            .filter(|p| p.kind != ParamKind::Bias)
            .map(|p| 0.5 * p.value.sum_sq())
            .sum();
        let pen = apply_penalty(&mut model.params, &config).unwrap();
        assert!((pen.l2 - expected).abs() < 1e-9);
        let p = model.params.get("fc2.weight").unwrap();
        assert_eq!(p.grad.data()[0], p.value.data()[0]);
        assert!(model.params.get("fc2.bias").unwrap().grad.data().iter().all(|&g| g == 0.0));
    }
}
