use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use expsparse::data::{load_csv, make_target, synthetic_classification, synthetic_regression, ColumnMap, DatasetKind};
use expsparse::harness::{
    default_k, load_model, run_experiment, save_model, ExperimentConfig, ExperimentKind, ModelEncoding,
};
use expsparse::sparsifier::estimate_thresholds;
use expsparse::{
    EasApproximator, Error, ErrorCategory, ManifoldSpec, NoActiveFallback, ProjectionMatrix, Result, RowDistribution,
    TargetTag,
};

#[derive(Parser)]
#[command(
    name = "expsparse",
    version,
    about = "Expand-and-sparsify approximators and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic manifold dataset as CSV.
    Gen(GenArgs),
    /// Fit a model on a CSV dataset and save it.
    Fit(FitArgs),
    /// Evaluate a saved model on a CSV dataset.
    Eval(EvalArgs),
    /// Run an experiment and write its CSV.
    Experiment(ExperimentArgs),
    /// Print a summary of a saved model.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Ambient dimension.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Intrinsic dimension of the manifold.
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long)]
    count: usize,
    /// Seed of the sample; datasets sharing --manifold-seed lie on the same manifold.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the embedding and the target function.
    #[arg(long, default_value_t = 0)]
    manifold_seed: u64,
    /// lipschitz_trig, linear, region_constant[:r]
    #[arg(long, default_value = "lipschitz_trig")]
    target: String,
    /// Emit class labels (bands of the first latent coordinate) instead of targets.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "target")]
    target_column: String,
    /// Expanded dimension.
    #[arg(long)]
    d: usize,
    /// Expected active units per input; defaults to ceil(8 ln d).
    #[arg(long)]
    k: Option<usize>,
    /// gaussian, gaussian:<sigma> or unit_sphere
    #[arg(long, default_value = "gaussian")]
    dist: String,
    /// Seed of the projection matrix.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Calibrate thresholds on this CSV instead of the fitting inputs.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Encoding::Text)]
    encoding: Encoding,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    Text,
    Binary,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "target")]
    target_column: String,
    /// Fail on inputs that activate no unit instead of predicting the training mean.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// scaling, pruning, dropout, memorization or lsh_profile
    tag: String,
    /// JSON config document.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key: --set key=value (value parsed as JSON when possible).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen(args: GenArgs) -> Result<()> {
    let spec = ManifoldSpec::random_trig(args.m, args.n, args.manifold_seed);
    spec.validate()?;
    let dataset = match args.classes {
        Some(classes) => synthetic_classification(&spec, args.count, classes, args.seed)?,
        None => {
            let tag: TargetTag = args.target.parse()?;
            let target = make_target(tag, &spec, args.manifold_seed)?;
            synthetic_regression(&spec, &target, args.count, args.seed)?
        }
    };
    emit(&dataset.to_csv_string(), args.out.as_deref())
}

fn regression_columns(target: &str) -> ColumnMap {
    ColumnMap {
        kind: DatasetKind::Regression,
        ..ColumnMap::regression(target)
    }
}

fn fit(args: FitArgs) -> Result<()> {
    let data = load_csv(&args.data, &regression_columns(&args.target_column))?;
    let n = data.n();
    let k = args.k.unwrap_or_else(|| default_k(args.d));
    let w = ProjectionMatrix::sample(n, args.d, RowDistribution::parse(&args.dist, n)?, args.seed)?;
    let tau = match &args.calibration {
        Some(path) => estimate_thresholds(&w, &load_csv(path, &regression_columns(&args.target_column))?.inputs, k)?,
        None => estimate_thresholds(&w, &data.inputs, k)?,
    };
    let model = EasApproximator::fit(w, tau, &data.inputs, data.regression_targets()?)?;
    let encoding = match args.encoding {
        Encoding::Text => ModelEncoding::Text,
        Encoding::Binary => ModelEncoding::Binary,
    };
    save_model(&model, &args.out, encoding)?;
    eprintln!(
        "fitted n={n} d={} k={k} on {} rows ({} dead units) -> {}",
        args.d,
        data.len(),
        model.dead_count(),
        args.out.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let data = load_csv(&args.data, &regression_columns(&args.target_column))?;
    let fallback = if args.strict {
        NoActiveFallback::Error
    } else {
        NoActiveFallback::GlobalMean
    };
    let report = model.evaluate(&data.inputs, data.regression_targets()?, fallback)?;
    let mut out = String::from("metric,value\n");
    let _ = writeln!(out, "mean_abs_err,{}", report.mean_abs_err);
    let _ = writeln!(out, "max_abs_err,{}", report.max_abs_err);
    let _ = writeln!(out, "rmse,{}", report.rmse);
    let _ = writeln!(out, "no_active_count,{}", report.no_active_count);
    let _ = writeln!(out, "rows,{}", data.len());
    emit(&out, args.out.as_deref())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let kind: ExperimentKind = args.tag.parse()?;
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        None => "{}".to_string(),
    };
    let mut overrides = Vec::new();
    for raw in &args.overrides {
        let (key, value) = raw
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{raw}`")))?;
        overrides.push((key.trim().to_string(), value.to_string()));
    }
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(trials) = args.trials {
        overrides.push(("trials".into(), trials.to_string()));
    }
    let document: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
    match document.get("experiment").and_then(|v| v.as_str()) {
        Some(found) if found != kind.as_str() => {
            return Err(Error::Config(format!(
                "config is for `{found}` but `{kind}` was requested"
            )));
        }
        _ => overrides.insert(0, ("experiment".into(), kind.as_str().into())),
    }
    let cfg = ExperimentConfig::from_json_with_overrides(&text, &overrides)?;
    let output = run_experiment(&cfg)?;
    let path = args.out.or_else(|| cfg.output.clone());
    emit(&output.csv, path.as_deref())
}

fn inspect(args: InspectArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let w = model.projection();
    let tau = model.thresholds();
    let (lo, hi) = model
        .readout()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let mut out = String::new();
    let _ = writeln!(out, "n: {}", w.n());
    let _ = writeln!(out, "d: {}", w.d());
    let _ = writeln!(out, "k: {}", tau.k);
    let _ = writeln!(out, "distribution: {}", w.dist());
    let _ = writeln!(out, "seed: {}", w.seed());
    let _ = writeln!(out, "quantile_level: {}", tau.quantile_level);
    let _ = writeln!(out, "calibration_samples: {}", tau.sample_size);
    let _ = writeln!(
        out,
        "fit_samples_per_unit: {}",
        model.counts().iter().sum::<u64>() as f64 / w.d() as f64
    );
    let _ = writeln!(out, "dead_units: {}", model.dead_count());
    let _ = writeln!(out, "global_mean: {}", model.global_mean());
    let _ = writeln!(out, "readout_range: {lo} {hi}");
    emit(&out, None)
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Runtime => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Fit(a) => fit(a),
        Command::Eval(a) => eval(a),
        Command::Experiment(a) => experiment(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
