//! Training runs, evaluation and comparisons on small synthetic data.

use dfreg_core::checkpoint::{save_checkpoint, CheckpointMeta};
use dfreg_core::data::{synth_dataset, Dataset, Split};
use dfreg_core::density::{estimate_density, gather_weights, interaction_energy, EnergyConfig};
use dfreg_core::harness::{
    apply_penalty, evaluate, run_comparison, train_model, AnalysisConfig, Architecture, ComparisonPlan, TrainConfig,
    METRICS_HEADER,
};
use dfreg_core::model::{build_model, ModelSpec, Variant};
use dfreg_core::nn;
use dfreg_core::optim::{OptimizerKind, OptimizerState};
use dfreg_core::{ParamKind, Rng, Tensor};

fn small(variant: Variant) -> TrainConfig {
    TrainConfig {
        variant,
        epochs: 2,
        batch_size: 32,
        seed: 11,
        dataset: Some("synth:4x12".into()),
        train_samples: Some(256),
        test_samples: Some(128),
        model: Architecture {
            conv_channels: vec![4, 8],
            dense_hidden: 16,
            ..Architecture::default()
        },
        ..TrainConfig::default()
    }
}

fn data(config: &TrainConfig) -> (Dataset, Dataset) {
    config.load_datasets().unwrap()
}

#[test]
fn same_seed_same_bytes() {
    let c = small(Variant::Dfreg);
    let c = TrainConfig { energy: EnergyConfig { alpha: 1e-3, ..EnergyConfig::default() }, ..c };
    let (train, test) = data(&c);
    let a = train_model(&c, &train, &test).unwrap();
    let b = train_model(&c, &train, &test).unwrap();
    assert_eq!(a.metrics_csv, b.metrics_csv);
    assert_eq!(a.checkpoint.blob, b.checkpoint.blob);
    assert_eq!(a.checkpoint.manifest_json(), b.checkpoint.manifest_json());
    assert!(a.metrics_csv.starts_with(METRICS_HEADER));
    assert_eq!(a.records.len(), 3);
    assert_eq!(a.checkpoint.manifest.step, 16);
}

#[test]
fn zero_alpha_matches_plain_bitwise() {
    let plain = small(Variant::Plain);
    let dfreg = small(Variant::DfregNoBn);
    let (train, test) = data(&plain);
    let a = train_model(&plain, &train, &test).unwrap();
    let b = train_model(&dfreg, &train, &test).unwrap();
    assert_eq!(a.checkpoint.blob, b.checkpoint.blob);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(
            (x.train_loss.to_bits(), x.test_loss.to_bits(), x.entropy_global.to_bits()),
            (y.train_loss.to_bits(), y.test_loss.to_bits(), y.entropy_global.to_bits())
        );
        assert_eq!(y.dfreg_loss, 0.0);
    }
}

#[test]
fn losses_add_up() {
    for (variant, energy) in [
        (Variant::DfregNoBn, EnergyConfig { alpha: 1e-2, ..EnergyConfig::default() }),
        (Variant::L2, EnergyConfig { lambda: 1e-3, ..EnergyConfig::default() }),
    ] {
        let c = TrainConfig { energy, ..small(variant) };
        let (train, test) = data(&c);
        let out = train_model(&c, &train, &test).unwrap();
        for r in &out.records {
            assert!((r.train_loss - (r.task_loss + r.dfreg_loss + r.l2_loss)).abs() <= 1e-9);
            assert!((0.0..=1.0).contains(&r.test_accuracy));
            assert!(r.dfreg_loss > 0.0 || r.l2_loss > 0.0);
        }
    }
}

#[test]
fn one_epoch_beats_chance() {
    let c = TrainConfig {
        epochs: 1,
        train_samples: Some(2000),
        test_samples: Some(500),
        dataset: Some("synth:4x16".into()),
        model: Architecture::default(),
        ..small(Variant::Plain)
    };
    let (train, test) = data(&c);
    let out = train_model(&c, &train, &test).unwrap();
    let acc = out.records.last().unwrap().test_accuracy;
    assert!(acc > 0.25 + 0.20, "accuracy {acc}");
}

#[test]
fn every_variant_trains() {
    for v in Variant::ALL {
        let mut c = TrainConfig { epochs: 1, ..small(v) };
        if v.uses_density() {
            c.energy.alpha = 1e-3;
        }
        if v.uses_l2() {
            c.energy.lambda = 1e-4;
        }
        let (train, test) = data(&c);
        let out = train_model(&c, &train, &test).unwrap();
        assert_eq!(out.records.len(), 2, "{v}");
        assert_eq!(out.model.params.iter().any(|p| p.kind == ParamKind::BnGamma), v.has_batchnorm());
    }
}

#[test]
fn augmentation_is_seeded() {
    let c = TrainConfig { augment_flip: true, epochs: 1, ..small(Variant::Plain) };
    let (train, test) = data(&c);
    let a = train_model(&c, &train, &test).unwrap();
    let b = train_model(&c, &train, &test).unwrap();
    assert_eq!(a.checkpoint.blob, b.checkpoint.blob);
    let plain = train_model(&TrainConfig { augment_flip: false, ..c }, &train, &test).unwrap();
    assert_ne!(a.checkpoint.blob, plain.checkpoint.blob);
}

#[test]
fn divergence_reports_numeric_error() {
    let c = TrainConfig {
        lr: 1e200,
        optimizer: OptimizerKind::SgdMomentum { momentum: 0.0 },
        schedule: dfreg_core::schedule::ScheduleKind::Constant,
        ..small(Variant::Plain)
    };
    let (train, test) = data(&c);
    let err = train_model(&c, &train, &test).unwrap_err();
    assert!(err.is_numeric(), "{err}");
    assert!(err.to_string().contains("epoch 1"), "{err}");
}

/// With the task gradient frozen at zero, Adam steps on the density penalty
/// alone never raise the (soft) concentration of the conv weights.
#[test]
fn penalty_only_steps_do_not_concentrate() {
    for seed in 0..5 {
        let config = TrainConfig {
            variant: Variant::DfregNoBn,
            energy: EnergyConfig { alpha: 1e-3, ..EnergyConfig::default() },
            ..TrainConfig::default()
        };
        let mut model = build_model(&ModelSpec { variant: Variant::DfregNoBn, ..ModelSpec::default() }, seed).unwrap();
        let mut opt = OptimizerState::new(config.optimizer, &model.params);
        let concentration = |params: &dfreg_core::ParameterSet| {
            let w = gather_weights(params, &[ParamKind::ConvKernel]).unwrap();
            interaction_energy(&estimate_density(&w.values, &config.energy).unwrap())
        };
        let mut prev = concentration(&model.params);
        for _ in 0..20 {
            model.params.zero_grad();
            apply_penalty(&mut model.params, &config).unwrap();
            opt.step(&mut model.params, config.lr).unwrap();
            let now = concentration(&model.params);
            assert!(now <= prev, "seed {seed}: {prev} -> {now}");
            prev = now;
        }
    }
}

#[test]
fn zeroed_head_predicts_class_zero() {
    let test = synth_dataset(3, 200, 4, 12, Split::Test);
    let spec = ModelSpec { conv_channels: vec![4, 8], dense_hidden: 16, num_classes: 4, image_size: 12, ..ModelSpec::default() };
    let mut model = build_model(&spec, 1).unwrap();
    for name in ["fc2.weight", "fc2.bias"] {
        model.params.get_mut(name).unwrap().value.fill(0.0);
    }
    let (loss, acc) = evaluate(&mut model, &test).unwrap();
    let zeros = test.labels.iter().filter(|&&l| l == 0).count() as f64 / test.len() as f64;
    assert_eq!(acc, zeros);
    assert!((loss - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn duplicated_samples_keep_accuracy() {
    let test = synth_dataset(3, 100, 4, 12, Split::Test);
    let spec = ModelSpec { conv_channels: vec![4, 8], dense_hidden: 16, num_classes: 4, image_size: 12, ..ModelSpec::default() };
    let mut model = build_model(&spec, 5).unwrap();
    let (_, acc) = evaluate(&mut model, &test).unwrap();
    let idx: Vec<usize> = (0..test.len()).chain(0..test.len()).collect();
    let (images, labels) = test.batch(&idx);
    let doubled = Dataset::new(images, labels, 4, Split::Test).unwrap();
    let (_, acc2) = evaluate(&mut model, &doubled).unwrap();
    assert_eq!(acc, acc2);
}

/// A softmax-regression probe separates the synthetic classes.
#[test]
fn synthetic_data_is_linearly_separable() {
    let data = synth_dataset(0, 2000, 4, 28, Split::Train);
    let f = 28 * 28;
    let x = data.images.clone().reshape(&[2000, f]).unwrap();
    let mut rng = Rng::new(0);
    let mut params = dfreg_core::ParameterSet::new();
    params.push("w", ParamKind::DenseWeight, Tensor::uniform(&[4, f], -0.01, 0.01, &mut rng)).unwrap();
    params.push("b", ParamKind::Bias, Tensor::zeros(&[4])).unwrap();
    let mut opt = OptimizerState::new(OptimizerKind::adam_default(), &params);
    let mut order: Vec<usize> = (0..2000).collect();
    for step in 0..200 {
        if step % 31 == 0 {
            rng.shuffle(&mut order);
        }
        let idx = &order[(step % 31) * 64..(step % 31) * 64 + 64];
        let (xb, yb) = {
            let mut v = Vec::with_capacity(64 * f);
            for &i in idx {
                v.extend_from_slice(&x.data()[i * f..(i + 1) * f]);
            }
            (Tensor::new(vec![64, f], v).unwrap(), idx.iter().map(|&i| data.labels[i]).collect::<Vec<_>>())
        };
        let logits = nn::dense(&xb, params.value("w").unwrap(), params.value("b").unwrap()).unwrap();
        let (_, g) = nn::softmax_cross_entropy(&logits, &yb, 0.0).unwrap();
        let grads = nn::dense_backward(&xb, params.value("w").unwrap(), &g).unwrap();
        params.zero_grad();
        params.get_mut("w").unwrap().grad = grads.weight;
        params.get_mut("b").unwrap().grad = grads.bias;
        opt.step(&mut params, 1e-2).unwrap();
    }
    let logits = nn::dense(&x, params.value("w").unwrap(), params.value("b").unwrap()).unwrap();
    let (_, acc) = dfreg_core::harness::score_logits(&logits, &data.labels).unwrap();
    assert!(acc >= 0.95, "probe accuracy {acc}");
}

#[test]
fn comparison_survives_failed_runs() {
    let base = TrainConfig { epochs: 1, batch_size: 1, train_samples: Some(24), ..small(Variant::Plain) };
    let plan = ComparisonPlan {
        base,
        variants: vec![Variant::Plain, Variant::Batchnorm, Variant::DfregNoBn],
        alphas: vec![0.0, 1e-4, 1e-3],
        seeds: vec![1],
    };
    let dir = tempfile::tempdir().unwrap();
    let out = run_comparison(&plan, Some(dir.path()), &AnalysisConfig::default()).unwrap();
    assert_eq!(out.runs.len(), 5);
    let failed: Vec<_> = out.runs.iter().filter(|r| r.result.is_err()).map(|r| r.name.as_str()).collect();
    assert_eq!(failed, vec!["batchnorm_seed1"]);
    let summary: Vec<&str> = out.summary_csv.lines().collect();
    assert_eq!(summary.len(), 6);
    assert_eq!(summary.iter().filter(|l| l.starts_with("dfreg_no_bn_alpha")).count(), 3);
    assert!(summary[2].contains(",failed,"));
    for run in ["plain_seed1", "dfreg_no_bn_alpha0.001_seed1"] {
        let d = dir.path().join("runs").join(run);
        for f in ["config.json", "metrics.csv", "model.json", "model.bin", "analysis/entropy.csv"] {
            assert!(d.join(f).is_file(), "{run}/{f}");
        }
    }
    assert!(dir.path().join("comparison.csv").is_file());
}

#[test]
fn identical_configs_identical_rows() {
    let base = TrainConfig { epochs: 1, train_samples: Some(64), ..small(Variant::Plain) };
    let plan = ComparisonPlan { base, variants: vec![Variant::Plain, Variant::Plain], alphas: vec![], seeds: vec![2] };
    let out = run_comparison(&plan, None, &AnalysisConfig::default()).unwrap();
    let rows: Vec<&str> = out.comparison_csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0], rows[2]);
    assert_eq!(rows[1], rows[3]);
}

#[test]
fn seeded_model_digest_is_frozen() {
    let model = build_model(&ModelSpec::default(), 7).unwrap();
    let ck = save_checkpoint(&model, &CheckpointMeta { step: 0, config_hash: String::new() });
    assert_eq!(ck.digest(), "60eb19f1319fd397d5f097823c1a41d368f0b4c835bcd1ed726e7309380328c0");
}
