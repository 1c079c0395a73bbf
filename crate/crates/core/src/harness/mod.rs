//! Training runs, evaluation, checkpoint analysis and variant comparisons.

mod analyze;
mod compare;
mod config;
mod train;

pub use analyze::{analyze_checkpoint, file_stem, Analysis, AnalysisConfig, LayerAnalysis, ENTROPY_HEADER};
pub use compare::{
    run_comparison, ComparisonOutcome, ComparisonPlan, PlannedRun, RunResult, RunSummary, COMPARISON_HEADER,
    SUMMARY_HEADER,
};
pub use config::{
    Architecture, DatasetSource, TrainConfig, SYNTH_DEFAULT_CLASSES, SYNTH_DEFAULT_SIZE, SYNTH_DEFAULT_TEST,
    SYNTH_DEFAULT_TRAIN,
};
pub use train::{
    apply_penalty, argmax, conv_entropy, evaluate, layer_entropy_csv, metrics_csv, run_training, score_logits,
    train_model, train_step, write_run_dir, LayerEntropy, MetricsRecord, Penalty, StepContext, StepMetrics,
    TrainingOutcome, LAYER_ENTROPY_HEADER, LOG_BASE, METRICS_HEADER,
};
