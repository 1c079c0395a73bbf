//! `dfreg`: train, compare, analyze, gradcheck and export-plots.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 numerical abort
//! during training, 3 gradient check failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dfreg_core::checkpoint::Checkpoint;
use dfreg_core::density::Binning;
use dfreg_core::gradcheck::{run_suite, SuiteConfig, SUITE_OPS};
use dfreg_core::harness::{
    analyze_checkpoint, run_comparison, run_training, AnalysisConfig, ComparisonPlan, TrainConfig,
};
use dfreg_core::model::Variant;
use dfreg_core::plot::{export_plots, Scale};
use dfreg_core::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_GRADCHECK: u8 = 3;
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "dfreg", version, about = "Density-functional weight regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and write its run directory
    Train(TrainArgs),
    /// Train several variants / alphas / seeds and write a merged table
    Compare(CompareArgs),
    /// Per-layer histograms, entropy and filter spectra of a checkpoint
    Analyze(AnalyzeArgs),
    /// Finite-difference check of every backward pass
    Gradcheck(GradcheckArgs),
    /// Render SVG charts from CSV artifacts
    ExportPlots(ExportArgs),
}

/// Overrides applied on top of the config file; flags win.
#[derive(Debug, Args)]
struct Overrides {
    /// TOML or JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// plain, l2, dropout, batchnorm, dfreg or dfreg_no_bn
    #[arg(long)]
    variant: Option<String>,
    /// Density penalty strength
    #[arg(long)]
    alpha: Option<f64>,
    /// L2 penalty strength (l2 variant only)
    #[arg(long)]
    lambda: Option<f64>,
    /// Histogram bin count
    #[arg(long)]
    bins: Option<usize>,
    /// Lower edge of the histogram range
    #[arg(long, allow_hyphen_values = true)]
    range_lo: Option<f64>,
    /// Upper edge of the histogram range
    #[arg(long, allow_hyphen_values = true)]
    range_hi: Option<f64>,
    /// Training binning: soft_triangular or hard
    #[arg(long)]
    binning: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// mnist:<dir>, synth, or synth:<classes>x<size>
    #[arg(long)]
    dataset: Option<String>,
    /// Use only the first N training samples
    #[arg(long)]
    train_samples: Option<usize>,
    /// Use only the first N test samples
    #[arg(long)]
    test_samples: Option<usize>,
    /// Randomly mirror training images horizontally
    #[arg(long)]
    augment_flip: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Comma-separated seeds; each run goes to <out>/seed<N>
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Run directory (default runs/<variant>_seed<seed>)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Comma-separated variants
    #[arg(long, value_delimiter = ',', default_value = "plain,dfreg_no_bn")]
    variants: Vec<String>,
    /// Comma-separated alphas swept for the DFReg variants
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output directory (default runs/compare)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Run directory or model.json path
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated layer selectors (default: every conv layer)
    #[arg(long, value_delimiter = ',')]
    layers: Vec<String>,
    #[arg(long, default_value_t = 80)]
    bins: usize,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    range_lo: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    range_hi: f64,
    /// Radius of the low-frequency ratio, in grid cells
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Output directory (default <checkpoint dir>/analysis)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Comma-separated ops (default: all)
    #[arg(long, value_delimiter = ',')]
    ops: Vec<String>,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Random cases per op
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Run or comparison directory containing CSV files
    #[arg(long)]
    input: PathBuf,
    /// Directory for the SVG files
    #[arg(long)]
    out: PathBuf,
    /// Spectrum magnitude scale: linear or log
    #[arg(long, default_value = "linear")]
    scale: String,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numeric() { EXIT_NUMERIC } else { EXIT_CONFIG };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

fn resolve(o: &Overrides) -> Result<TrainConfig, Failure> {
    let mut c = match &o.config {
        Some(p) => TrainConfig::from_path(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = &o.variant {
        c.variant = v.parse::<Variant>()?;
    }
    if let Some(v) = o.alpha {
        c.energy.alpha = v;
    }
    if let Some(v) = o.lambda {
        c.energy.lambda = v;
    }
    if let Some(v) = o.bins {
        c.energy.num_bins = v;
    }
    if let Some(v) = o.range_lo {
        c.energy.range_lo = v;
    }
    if let Some(v) = o.range_hi {
        c.energy.range_hi = v;
    }
    if let Some(v) = &o.binning {
        c.energy.binning =
            Binning::parse(v).ok_or_else(|| config_failure(format!("unknown binning {v:?}; expected soft_triangular or hard")))?;
    }
    if let Some(v) = o.epochs {
        c.epochs = v;
    }
    if let Some(v) = o.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = o.lr {
        c.lr = v;
    }
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = &o.dataset {
        c.dataset = Some(v.clone());
    }
    if let Some(v) = o.train_samples {
        c.train_samples = Some(v);
    }
    if let Some(v) = o.test_samples {
        c.test_samples = Some(v);
    }
    if o.augment_flip {
        c.augment_flip = true;
    }
    Ok(c)
}

fn train_one(config: &TrainConfig) -> Result<(), Failure> {
    config.validate()?;
    let outcome = run_training(config)?;
    let last = outcome.records.last().expect("epoch-0 record");
    println!(
        "{} seed {}: test_acc {:.4} test_loss {:.4} entropy {:.4} -> {}",
        config.variant,
        config.seed,
        last.test_accuracy,
        last.test_loss,
        last.entropy_global,
        config.out.as_deref().unwrap_or(Path::new("-")).display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<(), Failure> {
    let mut config = resolve(&args.overrides)?;
    if let Some(out) = &args.out {
        config.out = Some(out.clone());
    }
    let base_out = config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}_seed{}", config.variant, config.seed)));
    if args.seeds.is_empty() {
        config.out = Some(base_out);
        return train_one(&config);
    }
    for &seed in &args.seeds {
        let mut c = config.clone();
        c.seed = seed;
        c.out = Some(base_out.join(format!("seed{seed}")));
        train_one(&c)?;
    }
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<(), Failure> {
    let mut base = resolve(&args.overrides)?;
    let variants = args
        .variants
        .iter()
        .map(|v| v.parse::<Variant>())
        .collect::<Result<Vec<_>, _>>()?;
    let seeds = if args.seeds.is_empty() { vec![base.seed] } else { args.seeds.clone() };
    let out = args.out.clone().or(base.out.take()).unwrap_or_else(|| PathBuf::from("runs/compare"));
    let plan = ComparisonPlan {
        base,
        variants,
        alphas: args.alphas.clone(),
        seeds,
    };
    for run in plan.expand()? {
        run.config.validate().map_err(|e| Failure::from(e.with_context(format!("run {}", run.name))))?;
    }
    let analysis = AnalysisConfig {
        energy: plan.base.energy,
        ..AnalysisConfig::default()
    };
    let outcome = run_comparison(&plan, Some(&out), &analysis)?;
    print!("{}", outcome.summary_csv);
    let failed = outcome.runs.iter().filter(|r| r.result.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} of {} runs failed; see {}", outcome.runs.len(), out.join("summary.csv").display());
    }
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), Failure> {
    if !args.checkpoint.exists() {
        return Err(config_failure(format!("checkpoint not found: {}", args.checkpoint.display())));
    }
    let (model, meta) = Checkpoint::read_dir(&args.checkpoint)?.load()?;
    let mut config = AnalysisConfig {
        layers: args.layers.clone(),
        radius: args.radius,
        ..AnalysisConfig::default()
    };
    config.energy.num_bins = args.bins;
    config.energy.range_lo = args.range_lo;
    config.energy.range_hi = args.range_hi;
    if !(args.radius >= 0.0) {
        return Err(config_failure("radius must be >= 0"));
    }
    let report = analyze_checkpoint(&model, &config)?;
    let out = args.out.clone().unwrap_or_else(|| {
        let dir = if args.checkpoint.is_file() {
            args.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default()
        } else {
            args.checkpoint.clone()
        };
        dir.join("analysis")
    });
    report.write_dir(&out)?;
    println!("step {} config {}", meta.step, meta.config_hash);
    println!("layer,entropy,low_frequency_ratio,dc_fraction");
    for l in &report.layers {
        println!("{},{:.6},{:.6},{:.6}", l.name, l.entropy, l.low_frequency_ratio, l.spectrum.dc_fraction);
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), Failure> {
    let ops: Vec<&str> = if args.ops.is_empty() {
        SUITE_OPS.to_vec()
    } else {
        args.ops.iter().map(String::as_str).collect()
    };
    if let Some(bad) = ops.iter().find(|op| !SUITE_OPS.contains(op)) {
        return Err(config_failure(format!("unknown op {bad:?}; available: {}", SUITE_OPS.join(", "))));
    }
    if !(args.h > 0.0 && args.h.is_finite()) || args.cases == 0 {
        return Err(config_failure("gradcheck needs h > 0 and cases >= 1"));
    }
    let cfg = SuiteConfig {
        seed: args.seed,
        cases: args.cases,
        h: args.h,
    };
    let results = run_suite(&ops, &cfg)?;
    println!("{:<24} {:>6} {:>14} status", "op", "cases", "max_rel_error");
    let mut failed = Vec::new();
    for r in &results {
        let ok = r.passed(GRADCHECK_TOL);
        println!("{:<24} {:>6} {:>14.3e} {}", r.op, r.cases, r.max_rel_error, if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(r.op);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_GRADCHECK,
            message: format!("gradient check failed for: {}", failed.join(", ")),
        })
    }
}

fn cmd_export(args: &ExportArgs) -> Result<(), Failure> {
    let scale = Scale::parse(&args.scale)
        .ok_or_else(|| config_failure(format!("unknown scale {:?}; expected linear or log", args.scale)))?;
    for path in export_plots(&args.input, &args.out, scale)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("DFREG_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| config_failure(format!("DFREG_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config_failure(format!("cannot configure thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::ExportPlots(a) => cmd_export(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
