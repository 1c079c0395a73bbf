use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Variant;

use super::analyze::{analyze_checkpoint, Analysis, AnalysisConfig};
use super::config::TrainConfig;
use super::train::{run_training, write_run_dir, MetricsRecord};

pub const COMPARISON_HEADER: [&str; 15] = [
    "run",
    "variant",
    "alpha",
    "lambda",
    "seed",
    "status",
    "epoch",
    "train_loss",
    "task_loss",
    "dfreg_loss",
    "test_loss",
    "test_acc",
    "entropy_global",
    "sum_rho_sq",
    "lr",
];

pub const SUMMARY_HEADER: [&str; 11] = [
    "run",
    "variant",
    "alpha",
    "lambda",
    "seed",
    "status",
    "final_test_acc",
    "final_test_loss",
    "final_entropy_global",
    "conv1_low_frequency_ratio",
    "message",
];

/// Variants × alphas × seeds over a shared base configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonPlan {
    pub base: TrainConfig,
    pub variants: Vec<Variant>,
    /// Swept for the DFReg variants only.
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub name: String,
    pub config: TrainConfig,
}

impl ComparisonPlan {
    /// One run per (variant, alpha, seed); non-DFReg variants run once per seed
    /// with alpha 0, and only the l2 variant keeps the base lambda.
    pub fn expand(&self) -> Result<Vec<PlannedRun>> {
        if self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("comparison needs at least one variant and one seed"));
        }
        let alphas = if self.alphas.is_empty() { vec![self.base.energy.alpha] } else { self.alphas.clone() };
        let mut runs = Vec::new();
        for &variant in &self.variants {
            for &seed in &self.seeds {
                let sweep: Vec<Option<f64>> = if variant.uses_density() {
                    alphas.iter().map(|&a| Some(a)).collect()
                } else {
                    vec![None]
                };
                for alpha in sweep {
                    let mut config = self.base.clone();
                    config.variant = variant;
                    config.seed = seed;
                    config.energy.alpha = alpha.unwrap_or(0.0);
                    if !variant.uses_density() {
                        config.energy.kinetic_coeff = 0.0;
                    }
                    if !variant.uses_l2() {
                        config.energy.lambda = 0.0;
                    }
                    let name = match alpha {
                        Some(a) => format!("{variant}_alpha{a}_seed{seed}"),
                        None => format!("{variant}_seed{seed}"),
                    };
                    runs.push(PlannedRun { name, config });
                }
            }
        }
        Ok(runs)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<MetricsRecord>,
    pub analysis: Analysis,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub name: String,
    pub config: TrainConfig,
    /// The error message when the run failed.
    pub result: std::result::Result<RunResult, String>,
}

#[derive(Debug, Clone)]
pub struct ComparisonOutcome {
    pub runs: Vec<RunSummary>,
    pub comparison_csv: String,
    pub summary_csv: String,
}

fn run_one(planned: &PlannedRun, out: Option<&Path>, analysis: &AnalysisConfig) -> Result<RunResult> {
    let mut config = planned.config.clone();
    config.out = None;
    let outcome = run_training(&config)?;
    let report = analyze_checkpoint(&outcome.model, analysis)?;
    if let Some(root) = out {
        let dir = root.join("runs").join(&planned.name);
        config.out = Some(dir.clone());
        write_run_dir(&dir, &config, &outcome)?;
        report.write_dir(&dir.join("analysis"))?;
    }
    Ok(RunResult {
        records: outcome.records,
        analysis: report,
    })
}

fn csv_text(rows: Vec<Vec<String>>, header: &[&str]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

/// Runs every planned configuration in order. A failed run becomes a
/// `failed` row and the remaining runs still execute.
pub fn run_comparison(plan: &ComparisonPlan, out: Option<&Path>, analysis: &AnalysisConfig) -> Result<ComparisonOutcome> {
    let planned = plan.expand()?;
    let mut runs = Vec::with_capacity(planned.len());
    for p in &planned {
        let result = run_one(p, out, analysis).map_err(|e| e.to_string());
        runs.push(RunSummary {
            name: p.name.clone(),
            config: p.config.clone(),
            result,
        });
    }

    let mut wide = Vec::new();
    let mut summary = Vec::new();
    for r in &runs {
        let c = &r.config;
        let key = vec![
            r.name.clone(),
            c.variant.to_string(),
            c.energy.alpha.to_string(),
            c.energy.lambda.to_string(),
            c.seed.to_string(),
        ];
        match &r.result {
            Ok(res) => {
                for m in &res.records {
                    let mut row = key.clone();
                    row.push("ok".into());
                    row.extend(
                        [
                            m.epoch as f64,
                            m.train_loss,
                            m.task_loss,
                            m.dfreg_loss,
                            m.test_loss,
                            m.test_accuracy,
                            m.entropy_global,
                            m.sum_rho_sq,
                            m.lr,
                        ]
                        .iter()
                        .map(|v| v.to_string()),
                    );
                    wide.push(row);
                }
                let last = res.records.last().expect("at least the epoch-0 record");
                let lfr = res
                    .analysis
                    .get("conv1")
                    .map(|l| l.low_frequency_ratio.to_string())
                    .unwrap_or_default();
                let mut row = key.clone();
                row.extend([
                    "ok".into(),
                    last.test_accuracy.to_string(),
                    last.test_loss.to_string(),
                    last.entropy_global.to_string(),
                    lfr,
                    String::new(),
                ]);
                summary.push(row);
            }
            Err(msg) => {
                let mut row = key.clone();
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), COMPARISON_HEADER.len() - row.len()));
                wide.push(row);
                let mut row = key.clone();
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), 4));
                row.push(msg.clone());
                summary.push(row);
            }
        }
    }
    let outcome = ComparisonOutcome {
        runs,
        comparison_csv: csv_text(wide, &COMPARISON_HEADER),
        summary_csv: csv_text(summary, &SUMMARY_HEADER),
    };
    if let Some(root) = out {
        fs::create_dir_all(root)?;
        fs::write(root.join("comparison.csv"), &outcome.comparison_csv)?;
        fs::write(root.join("summary.csv"), &outcome.summary_csv)?;
    }
    Ok(outcome)
}
